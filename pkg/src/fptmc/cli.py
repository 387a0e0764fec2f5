"""Command-line front end.

Subcommands: ``estimate`` (density + rate CSVs), ``validate`` (oracle
suite), ``tail`` (eigenvalue ladder and mixture density), ``compare``
(direct estimator vs Euler+KDE at matched wall clock), ``lamperti``
(print the unit-diffusion reduction of a general diffusion).

Exit codes: 0 success, 1 configuration error, 2 numeric failure,
3 failed validation check. Outputs are UTF-8 with LF endings and are
byte-identical for identical (config, seed) regardless of --threads.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .baseline import empirical_cdf, euler_fpt_sample, kernel_density
from .bridge import bessel_max_cdf, generate_ensemble, path_seed
from .errors import ConfigError, FptmcError, ParseError
from .estimator import convergence_scaling, estimate_density, run_estimation
from .expr import parse_drift, to_string
from .model import (
    GeneralDiffusionSpec,
    bm_fpt_density,
    build_model,
    lamperti_transform,
    ou_fpt_density,
)
from .tail import build_tail, evaluate_mixture, principal_eigenvalue

_ENV_PREFIX = "FPTMC_"

_DEFAULTS = {
    "drift": None,
    "x": None,
    "general": None,  # {"b", "sigma", "level", "start"}
    "t_max": 10.0,
    "grid_points": 200,
    "N": 10000,
    "M": 1000,
    "seed": 0,
    "tail": {"enabled": False, "T": None, "n": None, "mesh": 4000},
    "baseline": {"enabled": False, "h": 0.01, "N_e": 100000, "correction": True},
}


@dataclass
class RunConfig:
    data: dict
    threads: int = 1
    out_dir: Path = field(default_factory=lambda: Path("."))

    def __getitem__(self, key):
        return self.data[key]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def _env_overrides() -> dict:
    out: dict = {}
    casts = {
        "drift": str, "x": float, "t_max": float, "grid_points": int,
        "n": int, "m": int, "seed": int,
    }
    keymap = {"n": "N", "m": "M"}
    for name, cast in casts.items():
        raw = os.environ.get(_ENV_PREFIX + name.upper())
        if raw is not None:
            out[keymap.get(name, name)] = cast(raw)
    return out


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = copy.deepcopy(_DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        file_cfg.pop("derived", None)
        cfg = _merge(cfg, file_cfg)
    cfg = _merge(cfg, _env_overrides())

    flag_cfg: dict = {}
    for flag, key in (("drift", "drift"), ("x", "x"), ("t_max", "t_max"),
                      ("grid_points", "grid_points"), ("n", "N"), ("m", "M"),
                      ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            flag_cfg[key] = v
    general_flags = {k: getattr(args, k, None) for k in ("b", "sigma", "level", "start")}
    if any(v is not None for v in general_flags.values()):
        if None in (general_flags["b"], general_flags["sigma"], general_flags["start"]):
            raise ConfigError("a general diffusion needs --b, --sigma and --start")
        general_flags["level"] = general_flags["level"] or 0.0
        flag_cfg["general"] = general_flags
    for flag, section, key in (("splice_t", "tail", "T"), ("domain_n", "tail", "n"),
                               ("mesh", "tail", "mesh"), ("h", "baseline", "h"),
                               ("n_euler", "baseline", "N_e")):
        v = getattr(args, flag, None)
        if v is not None:
            flag_cfg.setdefault(section, {})[key] = v
    if getattr(args, "correction", None) is not None:
        flag_cfg.setdefault("baseline", {})["correction"] = args.correction
    cfg = _merge(cfg, flag_cfg)

    threads = args.threads if getattr(args, "threads", None) else int(
        os.environ.get(_ENV_PREFIX + "THREADS", "1"))
    out_dir = Path(args.out_dir if getattr(args, "out_dir", None)
                   else os.environ.get(_ENV_PREFIX + "OUT_DIR", "."))
    run = RunConfig(data=cfg, threads=threads, out_dir=out_dir)
    _validate_config(run)
    return run


def _validate_config(run: RunConfig) -> None:
    cfg = run.data
    has_simple = cfg["drift"] is not None or cfg["x"] is not None
    has_general = cfg["general"] is not None
    if has_simple and has_general:
        raise ConfigError("give either drift+x or a general {b, sigma, level, start}, not both")
    if has_simple and (cfg["drift"] is None or cfg["x"] is None):
        raise ConfigError("drift and x must be given together")
    if cfg["t_max"] <= 0:
        raise ConfigError("t_max must be positive")
    if cfg["grid_points"] < 2:
        raise ConfigError("grid_points must be at least 2")
    if cfg["N"] < 2:
        raise ConfigError("N must be at least 2")
    if cfg["M"] < 2 or cfg["M"] % 2:
        raise ConfigError("M must be even and at least 2")
    if run.threads < 1:
        raise ConfigError("threads must be at least 1")


def _build_model_from_config(run: RunConfig):
    cfg = run.data
    if cfg["general"] is not None:
        g = cfg["general"]
        spec = GeneralDiffusionSpec(
            b=parse_drift(g["b"]), sigma=parse_drift(g["sigma"]),
            level=float(g.get("level", 0.0)), start=float(g["start"]),
        )
        model, x = lamperti_transform(spec)
        if not math.isinf(model.z_valid_max):
            # regrow the drift table to cover the radii the bridge paths
            # reach on this t grid (x + sqrt(t) max|beta|, max|beta| < 4.5
            # across any practical ensemble)
            span = x + 4.5 * math.sqrt(float(cfg["t_max"])) + 1.0
            if span > model.z_valid_max:
                model, _ = lamperti_transform(spec, z_span=span)
        return model
    if cfg["drift"] is None:
        raise ConfigError("no drift given (use --drift/--x or a general spec)")
    return build_model(cfg["drift"], float(cfg["x"]))


def _t_grid(run: RunConfig) -> np.ndarray:
    g = int(run["grid_points"])
    t_max = float(run["t_max"])
    return np.arange(1, g + 1) * (t_max / g)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_text(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def _write_meta(path: Path, run: RunConfig, derived: dict) -> None:
    payload = copy.deepcopy(run.data)
    payload["derived"] = derived
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(run: RunConfig) -> int:
    model = _build_model_from_config(run)
    t_grid = _t_grid(run)
    res = run_estimation(model, t_grid, int(run["N"]), int(run["M"]),
                         int(run["seed"]), threads=run.threads)
    est = res.density()
    rate = res.rate()
    _write_csv(run.out_dir / "density.csv",
               ["t", "p_hat", "std_err", "lambda_hat"],
               [est.t_grid, est.p_hat, est.std_err, rate.lambda_hat])
    _write_csv(run.out_dir / "rate.csv", ["t", "lambda_hat"],
               [rate.t_grid, rate.lambda_hat])
    _write_meta(run.out_dir / "meta.json", run, {
        "backend": _kernels.BACKEND,
        "version": __version__,
        "prefactor_log": est.prefactor_log,
        "rate_lower_bound": rate.lower_bound,
        "rate_upper_bound": rate.upper_bound,
        "rate_small_t_limit": rate.small_t_limit,
    })
    print(f"wrote density.csv, rate.csv, meta.json to {run.out_dir} "
          f"(backend={_kernels.BACKEND})")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def _check_zero_exact(run: RunConfig):
    model = build_model("0", 1.0)
    grid = np.linspace(0.1, 5.0, 50)
    est = estimate_density(model, grid, 400, 200, int(run["seed"]), threads=run.threads)
    q = bm_fpt_density(1.0, grid)
    exact = bool(np.array_equal(est.p_hat, q) and np.all(est.std_err == 0.0))
    return exact, "p_hat == q_x bitwise with zero std_err", "exact" if exact else "mismatch"

def _check_ou_density(run: RunConfig):
    model = build_model("-z", 1.0)
    grid = np.linspace(0.1, 7.0, 140)
    est = estimate_density(model, grid, 10000, 1000, int(run["seed"]), threads=run.threads)
    ref = ou_fpt_density(grid)
    ok_pts = np.abs(est.p_hat - ref) <= 4.0 * est.std_err
    frac = float(np.mean(ok_pts))
    return frac >= 0.95, "|p_hat - p_1| <= 4 std_err at >= 95% of grid", f"{frac:.1%} of points"

def _check_bessel(run: RunConfig):
    # M = 8000: the grid maximum under-reads the continuous maximum by
    # ~0.8/sqrt(M), which must fit inside the 0.015 band for the check to
    # measure the law rather than the discretization; 4e4 paths keep the
    # binomial noise near 0.0025 so the band is a ~3 sigma test
    ens = generate_ensemble(40000, 8000, int(run["seed"]))
    worst = 0.0
    for y in (0.8, 1.0, 1.2, 1.5):
        emp = float(np.mean(ens.max_norm <= y))
        worst = max(worst, abs(emp - bessel_max_cdf(y)))
    series_ok = abs(bessel_max_cdf(1.0) - 0.177923355643) <= 1e-4
    return worst <= 0.015 and series_ok, "max-law ECDF within 0.015; series value at 1", \
        f"worst |ECDF - CDF| = {worst:.4f} at M=8000"

def _check_coverage(run: RunConfig):
    model = build_model("-z", 1.0)
    devs = []
    for r in range(60):
        est = estimate_density(model, np.array([1.0]), 2000, 200,
                               path_seed(int(run["seed"]), r), threads=run.threads)
        devs.append(abs(est.p_hat[0] - ou_fpt_density(1.0)) / est.std_err[0])
    q95 = float(np.quantile(devs, 0.95))
    return q95 <= 2.3, "95th percentile of |p_hat - p|/std_err <= 2.3", f"q95 = {q95:.2f}"

def _check_scaling(run: RunConfig):
    model = build_model("-z", 1.0)
    grid = np.linspace(0.1, 5.0, 25)
    table = convergence_scaling(model, grid, [100, 1000, 10000], 30,
                                int(run["seed"]), ou_fpt_density, m=200,
                                threads=run.threads)
    ok = -0.62 <= table.slope <= -0.38
    return ok, "log-log RMSE slope vs N in [-0.62, -0.38]", f"slope = {table.slope:.3f}"


_VALIDATE_CHECKS = {
    "zero": _check_zero_exact,
    "ou": _check_ou_density,
    "bessel": _check_bessel,
    "coverage": _check_coverage,
    "scaling": _check_scaling,
}


def cmd_validate(run: RunConfig, checks: list[str]) -> int:
    rows = []
    all_ok = True
    for name in checks:
        if name not in _VALIDATE_CHECKS:
            raise ConfigError(f"unknown check {name!r} (have {sorted(_VALIDATE_CHECKS)})")
        started = time.perf_counter()
        ok, what, detail = _VALIDATE_CHECKS[name](run)
        rows.append((name, ok, what, detail, time.perf_counter() - started))
        all_ok &= ok
    width = max(len(r[0]) for r in rows)
    for name, ok, what, detail, elapsed in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {what}  [{detail}; {elapsed:.1f}s]")
    return 0 if all_ok else 3


# ---------------------------------------------------------------------------
# tail
# ---------------------------------------------------------------------------

def cmd_tail(run: RunConfig) -> int:
    tail_cfg = run["tail"]
    if not tail_cfg.get("enabled", False):
        raise ConfigError("tail.enabled must be true for the tail command")
    model = _build_model_from_config(run)
    t_grid = _t_grid(run)
    res = run_estimation(model, t_grid, int(run["N"]), int(run["M"]),
                         int(run["seed"]), threads=run.threads)
    est = res.density()
    n0 = tail_cfg["n"] if tail_cfg.get("n") else max(8.0, 4.0 * model.x0)
    mesh = int(tail_cfg.get("mesh", 4000))
    tm = build_tail(model, est, splice_time=tail_cfg.get("T"), n=float(n0), mesh=mesh)
    ladder = []
    for nk in (n0, 2 * n0, 4 * n0):
        eig = tm.eigen if nk == n0 else principal_eigenvalue(model, float(nk), mesh)
        ladder.append({"n": float(nk), "mu1": eig.mu1,
                       "mu_coarse": eig.mu_coarse, "mu_fine": eig.mu_fine})
    step = float(t_grid[1] - t_grid[0])
    extension = t_grid[-1] + step * np.arange(1, len(t_grid) + 1)
    full_grid = np.concatenate([t_grid, extension])
    _write_csv(run.out_dir / "density_mixture.csv", ["t", "p_mixture"],
               [full_grid, evaluate_mixture(tm, full_grid)])
    payload = {
        "ladder": ladder,
        "T": tm.splice_time,
        "lambda": tm.decay_rate,
        "c_star": tm.c_star,
        "n": float(n0),
        "mesh": mesh,
    }
    _write_text(run.out_dir / "eigen.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote eigen.json, density_mixture.csv to {run.out_dir} "
          f"(T={tm.splice_time:g}, lambda={tm.decay_rate:.6g}, c*={tm.c_star:.6g})")
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _closed_form_reference(run: RunConfig):
    drift, x = run["drift"], run["x"]
    if drift is not None and to_string(parse_drift(drift)) == "0":
        return lambda t: bm_fpt_density(float(x), t)
    if drift is not None and float(x) == 1.0:
        model = build_model(drift, 1.0)
        probe = np.linspace(0.0, 5.0, 64)
        if np.allclose(model.drift(probe), -probe, atol=1e-12):
            return ou_fpt_density
    raise ConfigError("compare needs a closed-form oracle: drift '0' or '-z' with x = 1")


def cmd_compare(run: RunConfig) -> int:
    base_cfg = run["baseline"]
    if not base_cfg.get("enabled", False):
        raise ConfigError("baseline.enabled must be true for the compare command")
    ref = _closed_form_reference(run)
    model = _build_model_from_config(run)
    horizon = float(run["t_max"])
    grid = np.linspace(0.1, horizon, 60)
    ref_vals = np.asarray(ref(grid))

    started = time.perf_counter()
    est = estimate_density(model, grid, int(run["N"]), int(run["M"]),
                           int(run["seed"]), threads=run.threads)
    direct_time = time.perf_counter() - started
    rows = [("direct", direct_time, float(np.max(np.abs(est.p_hat - ref_vals))),
             float(np.mean(np.abs(est.p_hat - ref_vals))), "")]

    h0 = float(base_cfg["h"])
    correction = bool(base_cfg.get("correction", True))
    pilot_n = 2000
    started = time.perf_counter()
    euler_fpt_sample(model, h0, horizon, pilot_n, correction, path_seed(int(run["seed"]), 999))
    per_path = (time.perf_counter() - started) / pilot_n
    results = {}
    for h in (h0, 5.0 * h0):
        n_e = int(min(float(base_cfg["N_e"]),
                      max(1000.0, direct_time * (h / h0) / max(per_path, 1e-12))))
        started = time.perf_counter()
        run_e = euler_fpt_sample(model, h, horizon, n_e, correction,
                                 path_seed(int(run["seed"]), 7))
        kde = kernel_density(run_e, grid=grid)
        elapsed = time.perf_counter() - started
        err = np.abs(kde.values - ref_vals)
        rows.append((f"euler+kde h={h:g}", elapsed, float(err.max()),
                     float(err.mean()), f"N_e={n_e}"))
        results[h] = run_e

    print(f"{'method':<22}{'wall-time':>11}{'max-abs-err':>14}{'mean-abs-err':>14}  notes")
    for name, elapsed, mx, mn, note in rows:
        print(f"{name:<22}{elapsed:>10.2f}s{mx:>14.6g}{mn:>14.6g}  {note}")
    payload = [{"method": r[0], "wall_time": r[1], "max_abs_error": r[2],
                "mean_abs_error": r[3], "notes": r[4]} for r in rows]
    _write_text(run.out_dir / "compare.json", json.dumps(payload, indent=2) + "\n")
    run0 = results[h0]
    cdf_grid = np.linspace(0.0, horizon, 201)
    _write_csv(run.out_dir / "euler_cdf.csv", ["t", "cdf_hat"],
               [cdf_grid, empirical_cdf(run0, cdf_grid)])
    kde0 = kernel_density(run0, grid=grid)
    _write_csv(run.out_dir / "euler_kde.csv", ["t", "kde_hat"], [grid, kde0.values])
    _write_text(run.out_dir / "euler_meta.json", json.dumps({
        "h": h0, "N_e": run0.n_paths, "correction": correction,
        "bandwidth": kde0.bandwidth,
    }, indent=2, sort_keys=True) + "\n")
    return 0


# ---------------------------------------------------------------------------
# lamperti
# ---------------------------------------------------------------------------

def cmd_lamperti(run: RunConfig, table_out: str | None) -> int:
    cfg = run.data
    if cfg["general"] is None:
        raise ConfigError("lamperti needs a general spec (--b, --sigma, --level, --start)")
    g = cfg["general"]
    spec = GeneralDiffusionSpec(b=parse_drift(g["b"]), sigma=parse_drift(g["sigma"]),
                                level=float(g.get("level", 0.0)), start=float(g["start"]))
    model, x = lamperti_transform(spec)
    print(f"x = {_fmt(x)}")
    if math.isinf(model.z_valid_max):
        print(f"a(z) = {to_string(model.a)}")
    else:
        zs = np.linspace(0.0, model.z_valid_max, 9)
        print("a(z) tabulated on [0, {:.6g}]; samples:".format(model.z_valid_max))
        for z in zs:
            print(f"  a({z:.6g}) = {model.drift(float(z)):.12g}")
        if table_out:
            ztab = np.linspace(0.0, model.z_valid_max, 2001)
            _write_csv(Path(table_out), ["z", "a"], [ztab, model.drift(ztab)])
            print(f"full table written to {table_out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--threads", type=int, help="worker threads (results are thread-count invariant)")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--drift", help="drift expression a(z)")
    p.add_argument("--x", type=float, help="start level x > 0")
    p.add_argument("--b", help="general diffusion drift b(z)")
    p.add_argument("--sigma", help="general diffusion coefficient sigma(z)")
    p.add_argument("--level", type=float, help="absorption level (general spec)")
    p.add_argument("--start", type=float, help="start point (general spec)")
    p.add_argument("--t-max", dest="t_max", type=float, help="right end of the t grid")
    p.add_argument("--grid-points", dest="grid_points", type=int, help="t grid size")
    p.add_argument("--n", dest="n", type=int, help="number of Monte-Carlo paths N")
    p.add_argument("--m", dest="m", type=int, help="bridge grid size M (even)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fptmc",
        description="First-passage-time density estimation for one-dimensional diffusions",
    )
    parser.add_argument("--version", action="version", version=f"fptmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="write density.csv, rate.csv, meta.json")
    _add_common(p_est)

    p_val = sub.add_parser("validate", help="run the oracle checks")
    _add_common(p_val)
    p_val.add_argument("--checks", default="zero,ou,bessel,coverage,scaling",
                       help="comma list from: zero,ou,bessel,coverage,scaling")

    p_tail = sub.add_parser("tail", help="eigenvalue ladder and mixture density")
    _add_common(p_tail)
    p_tail.add_argument("--splice-t", dest="splice_t", type=float, help="splice time T")
    p_tail.add_argument("--domain-n", dest="domain_n", type=float, help="eigenvalue domain length n")
    p_tail.add_argument("--mesh", type=int, help="eigenvalue mesh")
    p_tail.add_argument("--tail-enabled", dest="tail_enabled", action="store_true")

    p_cmp = sub.add_parser("compare", help="direct estimator vs Euler+KDE")
    _add_common(p_cmp)
    p_cmp.add_argument("--h", dest="h", type=float, help="Euler step size")
    p_cmp.add_argument("--n-euler", dest="n_euler", type=int, help="max Euler paths N_e")
    corr = p_cmp.add_mutually_exclusive_group()
    corr.add_argument("--correction", dest="correction", action="store_true", default=None)
    corr.add_argument("--no-correction", dest="correction", action="store_false", default=None)
    p_cmp.add_argument("--baseline-enabled", dest="baseline_enabled", action="store_true")

    p_lam = sub.add_parser("lamperti", help="print the transformed (a, x)")
    _add_common(p_lam)
    p_lam.add_argument("--table-out", help="CSV path for the full transformed-drift table")
    return parser


_EXPR_FLAGS = ("--drift", "--b", "--sigma")


def _join_expression_flags(argv: list[str]) -> list[str]:
    """Turn ``--drift -z`` into ``--drift=-z`` so drift expressions that
    start with a minus sign parse as values, not options."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _EXPR_FLAGS and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(_join_expression_flags(list(argv)))
    except SystemExit as exc:
        # argparse usage errors are configuration errors; --version/-h exit 0
        return 0 if exc.code in (0, None) else 1
    try:
        run = _load_config(args)
        if getattr(args, "tail_enabled", False):
            run.data["tail"]["enabled"] = True
        if getattr(args, "baseline_enabled", False):
            run.data["baseline"]["enabled"] = True
        if args.command == "estimate":
            return cmd_estimate(run)
        if args.command == "validate":
            return cmd_validate(run, [c.strip() for c in args.checks.split(",") if c.strip()])
        if args.command == "tail":
            return cmd_tail(run)
        if args.command == "compare":
            return cmd_compare(run)
        if args.command == "lamperti":
            return cmd_lamperti(run, args.table_out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FptmcError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
