"""Command-line driver for reproducible simulation, estimation, and reports.

Every command reads a flat ``key=value`` configuration (file via ``--config``
plus command-line overrides), writes its artifacts atomically into ``--out``,
and finishes by writing ``manifest.txt`` echoing the fully resolved
configuration together with a SHA-256 hash of every artifact.  Randomized
commands take an explicit seed or generate one and record it in the manifest,
so any run can be reproduced byte-for-byte from its manifest alone.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import secrets
import sys
from typing import Callable, Dict, IO, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .asymptotics import FEEDBACK_METHODS, feedback_ratio, tail_exponents
from .dataio import load_csv as load_ohlc_csv
from .dataio import normalize, write_audit, write_normalized_csv
from .diffusion import (
    DiffusionParams,
    integrate,
    sample_stationary,
    write_path_csv,
    write_samples_csv,
)
from .errors import ConfigError, NumericalError
from .estimators import (
    apparent_branching,
    covariance_identity_residuals,
    estimate_correlations,
    hill_exponent,
    tra_curve,
    write_c_grid_csv,
    write_d_grid_csv,
    write_tra_csv,
)
from .kernels import (
    ExponentialHawkes,
    ExponentialZumbach,
    ModelParams,
    ZeroKernel,
    kernel_norms,
    load_model,
    model_from_keyvalues,
    save_model,
)
from .presets import PRESET_NAMES, preset_model
from .qarch import (
    endogeneity,
    gmm_estimate,
    mle_student,
    parametric_fit,
    rank_one_diag_fit,
    write_kernel_fit_csv,
    write_qarch_csv,
)
from .simulate import (
    bin_series,
    mean_rate,
    read_bins_csv,
    read_events_csv,
    simulate_markovian,
    simulate_thinning,
    write_bins_csv,
    write_events_csv,
)

__all__ = ["main"]

_MODEL_PREFIXES = ("diagonal.", "zumbach.")
_GLOBAL_KEYS = {"seed", "threads"}


# ---------------------------------------------------------------------------
# config plumbing


def _parse_kv_lines(fp: IO[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for line in fp:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def _check_keys(cfg: Dict[str, str], allowed: set, model_keys: bool = False) -> None:
    for key in cfg:
        if key in allowed or key in _GLOBAL_KEYS:
            continue
        if model_keys and (
            key.startswith(_MODEL_PREFIXES) or key in ("lambda_inf", "psi")
        ):
            continue
        raise ConfigError(
            f"unknown key {key!r}; allowed: {', '.join(sorted(allowed))}"
        )


def _get_float(cfg: Dict[str, str], key: str, default: Optional[float] = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r} must be a number, got {cfg[key]!r}") from exc


def _get_int(cfg: Dict[str, str], key: str, default: Optional[int] = None) -> int:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return int(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"key {key!r} must be an integer, got {cfg[key]!r}") from exc


def _get_choice(cfg: Dict[str, str], key: str, choices: Sequence[str], default: str) -> str:
    val = cfg.get(key, default)
    if val not in choices:
        raise ConfigError(
            f"key {key!r} must be one of {', '.join(choices)}; got {val!r}"
        )
    return val


def _resolve_seed(cfg: Dict[str, str]) -> int:
    """Explicit seed, or a fresh one recorded back into the config."""
    if "seed" in cfg:
        return _get_int(cfg, "seed")
    seed = secrets.randbelow(2**31)
    cfg["seed"] = str(seed)
    return seed


def _resolve_model(cfg: Dict[str, str]) -> ModelParams:
    if "preset" in cfg:
        return preset_model(
            cfg["preset"],
            lambda_inf=_get_float(cfg, "lambda_inf", 1.0),
            psi=_get_float(cfg, "psi", 1.0),
        )
    if "model" in cfg:
        with open(cfg["model"]) as fp:
            return load_model(fp)
    if "diagonal.kind" not in cfg:
        raise ConfigError(
            "no model given: pass preset=..., model=<file>, or diagonal./zumbach. keys"
        )
    return model_from_keyvalues(cfg)


def _is_markovian(model: ModelParams) -> bool:
    return isinstance(model.diagonal, (ExponentialHawkes, ZeroKernel)) and isinstance(
        model.zumbach, (ExponentialZumbach, ZeroKernel)
    )


def _simulate(model: ModelParams, horizon: float, seed: int, cfg: Dict[str, str]):
    method = _get_choice(cfg, "method", ("auto", "markovian", "thinning"), "auto")
    max_events = _get_int(cfg, "max_events", 20_000_000)
    if method == "auto":
        method = "markovian" if _is_markovian(model) else "thinning"
    if method == "markovian":
        return simulate_markovian(model, horizon, seed, max_events=max_events)
    return simulate_thinning(model, horizon, seed, max_events=max_events)


def _read_series(path: str) -> np.ndarray:
    """One float per line; leading comment/header lines are skipped."""
    values: List[float] = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                if values:
                    raise ConfigError(f"non-numeric line in {path!r}: {line!r}")
    if not values:
        raise ConfigError(f"no numeric values in {path!r}")
    return np.asarray(values)


# ---------------------------------------------------------------------------
# artifact plumbing


def _write_artifact(out_dir: str, name: str, writer: Callable[[IO[str]], None]) -> str:
    """Write atomically: full content to a temp file, then rename."""
    path = os.path.join(out_dir, name)
    tmp = path + ".tmp"
    with open(tmp, "w") as fp:
        writer(fp)
    os.replace(tmp, path)
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    out_dir: str, command: str, cfg: Dict[str, str], artifacts: Dict[str, str]
) -> None:
    lines = [f"command={command}", f"version={__version__}"]
    lines.extend(f"config.{k}={cfg[k]}" for k in sorted(cfg))
    lines.extend(f"artifact.{n}={_sha256(artifacts[n])}" for n in sorted(artifacts))
    content = "\n".join(lines) + "\n"
    _write_artifact(out_dir, "manifest.txt", lambda fp: fp.write(content))


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_summary(out_dir: str, items: List[Tuple[str, object]]) -> str:
    content = "".join(f"{k}={_fmt(v)}\n" for k, v in items)
    return _write_artifact(out_dir, "summary.txt", lambda fp: fp.write(content))


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(
        cfg,
        {"preset", "model", "horizon", "delta", "method", "max_events"},
        model_keys=True,
    )
    model = _resolve_model(cfg)
    horizon = _get_float(cfg, "horizon")
    delta = _get_float(cfg, "delta", 1.0)
    seed = _resolve_seed(cfg)
    stream = _simulate(model, horizon, seed, cfg)
    bins = bin_series(stream, delta)
    artifacts: Dict[str, str] = {}
    artifacts["events.csv"] = _write_artifact(
        out_dir, "events.csv", lambda fp: write_events_csv(stream, fp)
    )
    artifacts["bins.csv"] = _write_artifact(
        out_dir, "bins.csv", lambda fp: write_bins_csv(bins, fp)
    )
    artifacts["model.txt"] = _write_artifact(
        out_dir, "model.txt", lambda fp: save_model(model, fp)
    )
    norms = kernel_norms(model)
    artifacts["summary.txt"] = _write_summary(
        out_dir,
        [
            ("n_events", stream.times.size),
            ("mean_rate", mean_rate(stream)),
            ("trace", norms["trace"]),
            ("n_bins", bins.n_bins),
        ],
    )
    return artifacts


def _cmd_estimate(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(cfg, {"events", "q", "delta", "preset", "model"}, model_keys=True)
    if "events" not in cfg:
        raise ConfigError("missing required key 'events' (event-stream CSV path)")
    with open(cfg["events"]) as fp:
        stream = read_events_csv(fp)
    q = _get_int(cfg, "q", 36)
    delta = _get_float(cfg, "delta", 1.0)
    bins = bin_series(stream, delta)
    est = estimate_correlations(bins, q)
    artifacts = {
        "c_grid.csv": _write_artifact(
            out_dir, "c_grid.csv", lambda fp: write_c_grid_csv(est, fp)
        ),
        "d_grid.csv": _write_artifact(
            out_dir, "d_grid.csv", lambda fp: write_d_grid_csv(est, fp)
        ),
    }
    summary: List[Tuple[str, object]] = [
        ("n_events", stream.times.size),
        ("lambda_bar", est.lambda_bar),
        ("apparent_branching", apparent_branching(bins, window=max(2, q))),
    ]
    has_model = (
        "preset" in cfg or "model" in cfg or "diagonal.kind" in cfg
    )
    if has_model:
        model = _resolve_model(cfg)
        res = covariance_identity_residuals(model, est)

        def write_residuals(fp: IO[str]) -> None:
            fp.write("kind,lag1,lag2,residual,stderr\n")
            for lag, r, s in zip(res.lags, res.res_rate, res.se_rate):
                fp.write(f"rate,{int(lag)},,{float(r)!r},{float(s)!r}\n")
            for (a, b), r, s in zip(res.pairs, res.res_pair, res.se_pair):
                fp.write(f"pair,{int(a)},{int(b)},{float(r)!r},{float(s)!r}\n")

        artifacts["residuals.csv"] = _write_artifact(
            out_dir, "residuals.csv", write_residuals
        )
        with np.errstate(invalid="ignore", divide="ignore"):
            rate_z = np.max(np.abs(res.res_rate) / res.se_rate)
            pair_z = np.max(np.abs(res.res_pair) / res.se_pair)
        summary.append(("max_rate_residual_z", float(rate_z)))
        summary.append(("max_pair_residual_z", float(pair_z)))
        summary.append(("quad_tol", res.quad_tol))
    artifacts["summary.txt"] = _write_summary(out_dir, summary)
    return artifacts


def _standardized(x: np.ndarray) -> Tuple[np.ndarray, float, float]:
    mean = float(x.mean())
    std = float(x.std())
    if std <= 0.0:
        raise NumericalError("input returns have zero variance")
    return (x - mean) / std, mean, std


def _cmd_calibrate(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(cfg, {"bins", "panel", "returns", "q", "estimator", "nu_init"})
    sources = [k for k in ("bins", "panel", "returns") if k in cfg]
    if len(sources) != 1:
        raise ConfigError(
            "calibrate needs exactly one input: bins=, panel=, or returns="
        )
    q = _get_int(cfg, "q", 18)
    estimator = _get_choice(cfg, "estimator", ("gmm", "mle", "both"), "both")
    artifacts: Dict[str, str] = {}
    if sources[0] == "panel":
        with open(cfg["panel"]) as fp:
            panel = load_ohlc_csv(fp)
        result = normalize(panel)
        artifacts["normalized.csv"] = _write_artifact(
            out_dir, "normalized.csv", lambda fp: write_normalized_csv(result, fp)
        )
        artifacts["audit.txt"] = _write_artifact(
            out_dir, "audit.txt", lambda fp: write_audit(result, fp)
        )
        series = result.ret[result.usable].ravel()
    elif sources[0] == "bins":
        with open(cfg["bins"]) as fp:
            series = read_bins_csv(fp).ret
    else:
        series = _read_series(cfg["returns"])
    x, in_mean, in_std = _standardized(np.asarray(series, dtype=float))

    gmm = gmm_estimate(x, q)
    artifacts["qarch_gmm.csv"] = _write_artifact(
        out_dir, "qarch_gmm.csv", lambda fp: write_qarch_csv(gmm.model, fp)
    )
    summary: List[Tuple[str, object]] = [
        ("n_obs", x.size),
        ("input_mean", in_mean),
        ("input_std", in_std),
        ("gmm_trace", gmm.model.trace()),
        ("gmm_moment_residual_max", gmm.moment_residual_max),
    ]
    final_model = gmm.model
    if estimator in ("mle", "both"):
        mle = mle_student(x, q, gmm, nu_init=_get_float(cfg, "nu_init", 6.0))
        artifacts["qarch_mle.csv"] = _write_artifact(
            out_dir, "qarch_mle.csv", lambda fp: write_qarch_csv(mle.model, fp)
        )
        summary.append(("mle_trace", mle.model.trace()))
        summary.append(("nu_dof", mle.nu_dof))
        summary.append(("mle_converged", mle.converged))
        final_model = mle.model
    fit = rank_one_diag_fit(final_model.kmat)
    try:
        fit = parametric_fit(fit)
    except (ValueError, NumericalError):
        pass  # too few positive entries for the parametric forms
    artifacts["kernel_fit.csv"] = _write_artifact(
        out_dir, "kernel_fit.csv", lambda fp: write_kernel_fit_csv(fit, fp)
    )
    endo = endogeneity(fit)
    summary.append(("decomposition_residual", fit.frobenius_residual))
    summary.append(("sum_phi", endo["sum_phi"]))
    summary.append(("sum_k2", endo["sum_k2"]))
    summary.append(("trace", endo["trace"]))
    artifacts["summary.txt"] = _write_summary(out_dir, summary)
    return artifacts


def _cmd_diffuse(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(
        cfg,
        {
            "n_h", "n_z", "beta_bar", "omega_bar", "lambda_inf", "psi",
            "mode", "n_samples", "dt", "horizon", "store_every",
            "burn_in_time", "thinning_interval",
        },
    )
    params = DiffusionParams(
        n_h=_get_float(cfg, "n_h", 0.0),
        beta_bar=_get_float(cfg, "beta_bar", 1.0),
        n_z=_get_float(cfg, "n_z"),
        omega_bar=_get_float(cfg, "omega_bar", 1.0),
        lambda_inf=_get_float(cfg, "lambda_inf", 1.0),
        psi=_get_float(cfg, "psi", 1.0),
    )
    mode = _get_choice(cfg, "mode", ("samples", "path"), "samples")
    seed = _resolve_seed(cfg)
    dt = _get_float(cfg, "dt") if "dt" in cfg else None
    artifacts: Dict[str, str] = {}
    if mode == "samples":
        n_samples = _get_int(cfg, "n_samples", 100_000)
        burn = _get_float(cfg, "burn_in_time") if "burn_in_time" in cfg else None
        thin = (
            _get_float(cfg, "thinning_interval")
            if "thinning_interval" in cfg
            else None
        )
        values = sample_stationary(
            params, n_samples, burn, thin, seed=seed, dt=dt
        )
        artifacts["samples.csv"] = _write_artifact(
            out_dir, "samples.csv", lambda fp: write_samples_csv(values, params, fp)
        )
        summary = [
            ("n_samples", values.size),
            ("mean_v", float(values.mean())),
            ("mean_v_theory", params.mean_v()),
        ]
    else:
        if dt is None:
            raise ConfigError("mode=path requires dt=")
        horizon = _get_float(cfg, "horizon")
        path = integrate(
            params, dt, horizon, seed,
            store_every=_get_int(cfg, "store_every", 1),
        )
        artifacts["path.csv"] = _write_artifact(
            out_dir, "path.csv", lambda fp: write_path_csv(path, fp)
        )
        summary = [
            ("n_rows", path.times.size),
            ("mean_v", float(path.v.mean())),
            ("mean_v_theory", params.mean_v()),
        ]
    artifacts["summary.txt"] = _write_summary(out_dir, summary)
    return artifacts


def _tail_values(bins) -> np.ndarray:
    vol = bins.rs_vol
    return vol[vol > 0.0]


def _preset_list(cfg: Dict[str, str]) -> List[str]:
    names = [s.strip() for s in cfg.get("preset", ",".join(PRESET_NAMES)).split(",")]
    for name in names:
        preset_model(name)  # validates, raising with the available list
    return names


def _cmd_tails(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(
        cfg,
        {
            "series", "events", "preset", "horizon", "delta",
            "n_seeds", "tail_fraction", "method", "max_events",
            "lambda_inf", "psi",
        },
    )
    tail_fraction = _get_float(cfg, "tail_fraction", 0.02)
    rows: List[Tuple[str, str, object, object, object]] = []
    summary: List[Tuple[str, object]] = []
    if "series" in cfg:
        rep = hill_exponent(_read_series(cfg["series"]), tail_fraction)
        rows.append(("series", "", rep.nu_hill, rep.sigma_min, rep.n_tail))
        summary.append(("nu_hill", rep.nu_hill))
    elif "events" in cfg:
        with open(cfg["events"]) as fp:
            stream = read_events_csv(fp)
        bins = bin_series(stream, _get_float(cfg, "delta", 1.0))
        rep = hill_exponent(_tail_values(bins), tail_fraction)
        rows.append(("events", "", rep.nu_hill, rep.sigma_min, rep.n_tail))
        summary.append(("nu_hill", rep.nu_hill))
    else:
        names = _preset_list(cfg)
        horizon = _get_float(cfg, "horizon")
        delta = _get_float(cfg, "delta", 1.0)
        n_seeds = _get_int(cfg, "n_seeds", 5)
        base_seed = _resolve_seed(cfg)
        for name in names:
            model = preset_model(
                name,
                lambda_inf=_get_float(cfg, "lambda_inf", 1.0),
                psi=_get_float(cfg, "psi", 1.0),
            )
            hills = []
            for k in range(n_seeds):
                stream = _simulate(model, horizon, base_seed + k, cfg)
                rep = hill_exponent(_tail_values(bin_series(stream, delta)), tail_fraction)
                rows.append((name, str(base_seed + k), rep.nu_hill, rep.sigma_min, rep.n_tail))
                hills.append(rep.nu_hill)
            mean_hill = float(np.mean(hills))
            rows.append((name, "mean", mean_hill, "", ""))
            summary.append((f"nu_hill.{name}", mean_hill))
            norms = kernel_norms(model)
            if norms["n_z"] > 0.0:
                a_star = feedback_ratio(
                    norms["n_h"], norms["n_z"], 0.0, method="chi_zero_order0"
                )
                te = tail_exponents(norms["n_z"], a_star)
                theory = te.return_survival_exponent + 1.0
                rows.append((name, "theory", theory, "", ""))
                summary.append((f"nu_theory.{name}", theory))

    def write_tails(fp: IO[str]) -> None:
        fp.write("series,seed,nu_hill,sigma_min,n_tail\n")
        for name, seed_s, nu, smin, ntail in rows:
            nu_s = repr(float(nu))
            smin_s = "" if smin == "" else repr(float(smin))
            ntail_s = "" if ntail == "" else str(int(ntail))
            fp.write(f"{name},{seed_s},{nu_s},{smin_s},{ntail_s}\n")

    artifacts = {
        "tails.csv": _write_artifact(out_dir, "tails.csv", write_tails),
        "summary.txt": _write_summary(out_dir, summary),
    }
    return artifacts


def _sanitize(name: str) -> str:
    return name.replace("-", "_").replace(".", "_")


def _cmd_tra(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(
        cfg,
        {
            "events", "preset", "horizon", "delta", "q", "method",
            "max_events", "lambda_inf", "psi",
        },
    )
    q = _get_int(cfg, "q", 36)
    delta = _get_float(cfg, "delta", 1.0)
    curves: Dict[str, object] = {}
    if "events" in cfg:
        with open(cfg["events"]) as fp:
            stream = read_events_csv(fp)
        bins = bin_series(stream, delta)
        curves["events"] = tra_curve(bins.rs_vol, bins.ret, q)
    else:
        names = _preset_list(cfg)
        horizon = _get_float(cfg, "horizon")
        base_seed = _resolve_seed(cfg)
        for i, name in enumerate(names):
            model = preset_model(
                name,
                lambda_inf=_get_float(cfg, "lambda_inf", 1.0),
                psi=_get_float(cfg, "psi", 1.0),
            )
            stream = _simulate(model, horizon, base_seed + i, cfg)
            bins = bin_series(stream, delta)
            curves[name] = tra_curve(bins.rs_vol, bins.ret, q)
    artifacts: Dict[str, str] = {}
    for name, rep in curves.items():
        fname = f"tra_{_sanitize(name)}.csv"
        artifacts[fname] = _write_artifact(
            out_dir, fname, lambda fp, rep=rep: write_tra_csv(rep, fp)
        )

    def write_combined(fp: IO[str]) -> None:
        cols = list(curves)
        fp.write("tau," + ",".join(f"delta_{_sanitize(c)}" for c in cols) + "\n")
        for t in range(1, q + 1):
            vals = ",".join(repr(float(curves[c].delta_ratio[t - 1])) for c in cols)
            fp.write(f"{t},{vals}\n")

    artifacts["tra.csv"] = _write_artifact(out_dir, "tra.csv", write_combined)
    artifacts["summary.txt"] = _write_summary(
        out_dir,
        [
            (f"max_delta.{name}", float(np.max(rep.delta_ratio)))
            for name, rep in curves.items()
        ],
    )
    return artifacts


_METHOD_ALIASES = {"chi_zero": "chi_zero_order0", "chi_small": "chi_small_order1"}


def _cmd_asymptotics(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(cfg, {"n_h", "n_z", "chi", "method", "total_time", "dt"})
    n_h = _get_float(cfg, "n_h")
    n_z = _get_float(cfg, "n_z")
    chi = _get_float(cfg, "chi", 0.0)
    method = cfg.get("method", "nz_small_quadratic")
    method = _METHOD_ALIASES.get(method, method)
    if method not in FEEDBACK_METHODS:
        raise ConfigError(
            f"unknown method {method!r}; choose from {', '.join(FEEDBACK_METHODS)}"
        )
    kwargs = {}
    if method == "monte_carlo":
        kwargs["seed"] = _resolve_seed(cfg)
        if "total_time" in cfg:
            kwargs["total_time"] = _get_float(cfg, "total_time")
        if "dt" in cfg:
            kwargs["dt"] = _get_float(cfg, "dt")
    a_star = feedback_ratio(n_h, n_z, chi, method=method, **kwargs)
    flags = []
    if a_star < 0.0:
        flags.append("a_star_negative")
    if n_z == 0.0:
        flags.append("no_signed_memory")
        mu = nu = density = math.inf
    else:
        te = tail_exponents(n_z, max(a_star, 0.0))
        mu = te.v_survival_exponent
        nu = te.return_survival_exponent
        density = te.v_density_exponent
        if method == "nz_small_quadratic" and n_z > 0.3:
            flags.append("n_z_beyond_small_regime")
    report = [
        ("n_h", n_h),
        ("n_z", n_z),
        ("chi", chi),
        ("method", method),
        ("a_star", a_star),
        ("mu", mu),
        ("nu", nu),
        ("density_exponent", density),
        ("validity_flags", ";".join(flags) if flags else "ok"),
    ]
    artifacts = {
        "report.txt": _write_artifact(
            out_dir,
            "report.txt",
            lambda fp: fp.writelines(f"{k}={_fmt(v)}\n" for k, v in report),
        )
    }
    return artifacts


def _cmd_report(cfg: Dict[str, str], out_dir: str) -> Dict[str, str]:
    _check_keys(cfg, {"manifest"})
    if "manifest" not in cfg:
        raise ConfigError("missing required key 'manifest' (path to a run manifest)")
    path = cfg["manifest"]
    with open(path) as fp:
        entries = _parse_kv_lines(fp)
    run_dir = os.path.dirname(os.path.abspath(path))
    lines = []
    n_bad = 0
    for key in sorted(entries):
        if not key.startswith("artifact."):
            lines.append(f"run.{key}={entries[key]}")
    for key in sorted(entries):
        if not key.startswith("artifact."):
            continue
        name = key[len("artifact."):]
        target = os.path.join(run_dir, name)
        if not os.path.exists(target):
            status = "missing"
        elif _sha256(target) == entries[key]:
            status = "ok"
        else:
            status = "mismatch"
        if status != "ok":
            n_bad += 1
        lines.append(f"artifact.{name}={status}")
    lines.append(f"verified={'ok' if n_bad == 0 else f'{n_bad} problems'}")
    artifacts = {
        "report.txt": _write_artifact(
            out_dir,
            "report.txt",
            lambda fp: fp.writelines(f"{line}\n" for line in lines),
        )
    }
    if n_bad:
        print(f"warning: {n_bad} artifacts failed verification", file=sys.stderr)
    return artifacts


_COMMANDS: Dict[str, Callable[[Dict[str, str], str], Dict[str, str]]] = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "calibrate": _cmd_calibrate,
    "diffuse": _cmd_diffuse,
    "tails": _cmd_tails,
    "tra": _cmd_tra,
    "asymptotics": _cmd_asymptotics,
    "report": _cmd_report,
}

_COMMAND_HELP = {
    "simulate": "simulate an event stream and its binned series",
    "estimate": "lag correlations, identity residuals, apparent feedback",
    "calibrate": "fit the quadratic variance model to returns",
    "diffuse": "integrate or sample the low-rate limit diffusion",
    "tails": "Hill tail exponents of binned range volatility",
    "tra": "time-reversal asymmetry curves",
    "asymptotics": "feedback ratio and tail exponents from theory",
    "report": "verify a run's artifacts against its manifest",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qhawkes",
        description="Reproducible experiments for quadratic self-exciting point processes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in _COMMAND_HELP.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument(
            "params", nargs="*", metavar="key=value",
            help="configuration overrides",
        )
        sp.add_argument("--config", help="key=value configuration file")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--threads", type=int, help="numba thread count")
    return parser


def _apply_threads(cfg: Dict[str, str]) -> None:
    if "threads" not in cfg:
        return
    threads = _get_int(cfg, "threads")
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    import numba

    limit = int(numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(max(1, min(threads, limit)))


def _resolve_config(args: argparse.Namespace) -> Dict[str, str]:
    cfg: Dict[str, str] = {}
    if args.config:
        with open(args.config) as fp:
            cfg.update(_parse_kv_lines(fp))
    for item in args.params:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, _, val = item.partition("=")
        cfg[key.strip()] = val.strip()
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.threads is not None:
        cfg["threads"] = str(args.threads)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out_dir = args.out
        os.makedirs(out_dir, exist_ok=True)
        _apply_threads(cfg)
        artifacts = _COMMANDS[args.command](cfg, out_dir)
        _write_manifest(out_dir, args.command, cfg, artifacts)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
