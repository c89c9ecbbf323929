"""Command-line entry point.

Subcommands: ``solve`` runs one continuation and writes trace/field
artifacts, ``sweep`` repeats it over a list of parameter values, and
``verify`` runs quick built-in finite-difference and property checks.

Configuration comes from an optional flat key=value file ('#' comments)
overridden by command-line flags.  Exit codes: 0 success, 1 configuration
error, 2 solver failure (the partial trace is still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .diagnostics import write_field_vtk, write_trace_csv
from .fem import (
    FULL,
    INTERIOR,
    FeFunction,
    SmoothingParams,
    assemble_control_jacobian,
    assemble_control_residual,
    psi_delta_h,
)
from .implicit_control import apply_control_derivative, solve_implicit_control
from .mesh import make_annulus_mesh, make_square_mesh
from .path_following import PathConfig, PathError, run_path
from .problems import get_problem


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "example1"
    beta: Optional[float] = None
    n: Optional[int] = None  # square mesh resolution
    n_rings: Optional[int] = None
    n_sectors: Optional[int] = None
    gamma0: Optional[float] = None
    delta0: Optional[float] = None
    ratio: Optional[float] = None  # fixed gamma/delta ratio
    forcing: str = "adaptive"
    kappa: float = 1e-3
    sigma0: float = 0.45
    sigma_min: float = 0.25
    sigma_max: float = 0.9
    m_budget: int = 30
    adapt_sigma: bool = True
    nested_thresholds: List[float] = field(default_factory=list)
    out: Optional[str] = None
    seed: int = 0


_FIELD_TYPES = {f.name: f.type for f in RunConfig.__dataclass_fields__.values()}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    if key in ("problem", "forcing", "out"):
        return raw
    if key in ("n", "n_rings", "n_sectors", "m_budget", "seed"):
        return int(raw)
    if key == "adapt_sigma":
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"adapt_sigma must be boolean, got {raw!r}")
    if key == "nested_thresholds":
        return [float(v) for v in raw.replace(",", " ").split()]
    return float(raw)


def parse_config_file(path: str) -> dict:
    """Flat key=value configuration with '#' comments."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, raw)
    return values


def _assemble_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(cfg, key, _coerce(key, flag) if isinstance(flag, str) and key not in (
                "problem", "forcing", "out") else flag)
    if cfg.out is None:
        cfg.out = os.environ.get("TVC_OUT_DIR", ".")
    return cfg


def _make_mesh(cfg: RunConfig):
    if cfg.problem == "example1":
        kwargs = {}
        if cfg.n_rings is not None:
            kwargs["n_rings"] = cfg.n_rings
        if cfg.n_sectors is not None:
            kwargs["n_sectors"] = cfg.n_sectors
        return get_problem(cfg.problem, beta=cfg.beta).mesh_factory(**kwargs)
    if cfg.problem == "example2":
        return get_problem(cfg.problem, beta=cfg.beta).mesh_factory(n=cfg.n or 32)
    raise ConfigError(f"unknown problem {cfg.problem!r}")


def _path_config(cfg: RunConfig, problem) -> PathConfig:
    gamma0 = cfg.gamma0 if cfg.gamma0 is not None else problem.gamma0
    if cfg.ratio is not None:
        delta0 = gamma0 / cfg.ratio
    elif cfg.delta0 is not None:
        delta0 = cfg.delta0
    else:
        delta0 = problem.delta0
    try:
        return PathConfig(
            gamma0=gamma0,
            delta0=delta0,
            kappa=cfg.kappa,
            sigma0=cfg.sigma0,
            sigma_min=min(cfg.sigma_min, cfg.sigma0),
            sigma_max=max(cfg.sigma_max, cfg.sigma0),
            m_budget=cfg.m_budget,
            forcing=cfg.forcing,
            adapt_sigma=cfg.adapt_sigma,
            nested_thresholds=cfg.nested_thresholds or None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _summary_line(result) -> str:
    last = result.trace[-1]
    e_j = "n/a" if last.e_j is None else f"{last.e_j:.6g}"
    return (
        f"gamma_final={last.gamma:.6g} it={result.total_newton_steps} "
        f"it_u={result.total_control_steps} e_j={e_j}"
    )


def _run_one(cfg: RunConfig, out_dir: Path) -> int:
    problem = get_problem(cfg.problem, beta=cfg.beta)
    mesh = _make_mesh(cfg)
    pconf = _path_config(cfg, problem)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = run_path(problem, mesh, pconf)
    except PathError as exc:
        write_trace_csv(out_dir / "trace.csv", exc.trace)
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    write_trace_csv(out_dir / "trace.csv", result.trace)
    fields = {
        "u": result.control,
        "y": FeFunction(INTERIOR, result.pair.y, result.mesh),
        "p": FeFunction(INTERIOR, result.pair.p, result.mesh),
    }
    write_field_vtk(out_dir / "fields.vtk", result.mesh, fields)
    summary = _summary_line(result)
    (out_dir / "summary.txt").write_text(summary + "\n")
    print(summary)
    return 0


def cmd_solve(args) -> int:
    cfg = _assemble_config(args)
    return _run_one(cfg, Path(cfg.out))


def cmd_sweep(args) -> int:
    cfg = _assemble_config(args)
    values = [float(v) for v in args.values.replace(",", " ").split()]
    if not values:
        raise ConfigError("sweep needs a non-empty values list")
    base = Path(cfg.out)
    base.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        run_cfg = RunConfig(**{**cfg.__dict__})
        if args.parameter == "sigma":
            run_cfg.sigma0 = value
            run_cfg.sigma_min = value
            run_cfg.sigma_max = value
            run_cfg.adapt_sigma = False
        elif args.parameter == "ratio":
            run_cfg.ratio = value
        elif args.parameter == "beta":
            run_cfg.beta = value
        sub = base / f"{args.parameter}_{value:g}"
        code = _run_one(run_cfg, sub)
        rows.append((value, code, sub))
    with open(base / "sweep.csv", "w") as fh:
        fh.write(f"{args.parameter},exit_code,directory\n")
        for value, code, sub in rows:
            fh.write(f"{value:g},{code},{sub.name}\n")
    return 0 if all(code == 0 for _, code, _ in rows) else 2


# -- built-in verification suites ----------------------------------------


def _verify_gradients(rng) -> List[str]:
    failures = []
    mesh = make_square_mesh(2)  # 8 triangles
    params = SmoothingParams(gamma=0.7, delta=0.3, beta=1.1)
    u = FeFunction(FULL, rng.standard_normal(mesh.n_vertices), mesh)
    p = FeFunction(FULL, rng.standard_normal(mesh.n_vertices), mesh)
    jac = assemble_control_jacobian(u, params).toarray()
    h = 1e-6
    fd = np.zeros_like(jac)
    for j in range(mesh.n_vertices):
        e = np.zeros(mesh.n_vertices)
        e[j] = h
        rp = assemble_control_residual(FeFunction(FULL, u.coeffs + e, mesh), p, params)
        rm = assemble_control_residual(FeFunction(FULL, u.coeffs - e, mesh), p, params)
        fd[:, j] = (rp - rm) / (2 * h)
    rel = np.abs(jac - fd).max() / np.abs(jac).max()
    if rel > 1e-5:
        failures.append(f"control Jacobian vs finite differences: rel {rel:.2e}")

    u_at, _ = solve_implicit_control(p, params, tol=1e-13)
    d = FeFunction(FULL, rng.standard_normal(mesh.n_vertices), mesh)
    z = apply_control_derivative(u_at, d, params).to_full()
    eps = 1e-5
    up, _ = solve_implicit_control(
        FeFunction(FULL, p.coeffs + eps * d.coeffs, mesh), params, tol=1e-13
    )
    um, _ = solve_implicit_control(
        FeFunction(FULL, p.coeffs - eps * d.coeffs, mesh), params, tol=1e-13
    )
    fd_z = (up.to_full() - um.to_full()) / (2 * eps)
    rel = np.abs(z - fd_z).max() / max(np.abs(z).max(), 1e-300)
    if rel > 1e-4:
        failures.append(f"control-map derivative vs resolve: rel {rel:.2e}")
    return failures


def _verify_psi(rng) -> List[str]:
    failures = []
    mesh = make_annulus_mesh(1.0, 2.0, 3, 12)
    delta = 0.37
    area = mesh.area
    for _ in range(50):
        u = FeFunction(FULL, rng.standard_normal(mesh.n_vertices), mesh)
        lo = psi_delta_h(u, 0.0)
        mid = psi_delta_h(u, delta)
        if not (lo <= mid <= lo + np.sqrt(delta) * area + 1e-12):
            failures.append("smoothed-TV bound chain violated")
            break
    return failures


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    suites = {"gradients": _verify_gradients, "psi": _verify_psi}
    names = list(suites) if args.suite == "all" else [args.suite]
    failures = []
    for name in names:
        if name not in suites:
            raise ConfigError(f"unknown suite {name!r}; choose from {sorted(suites)} or 'all'")
        failures += [f"[{name}] {msg}" for msg in suites[name](rng)]
        print(f"suite {name}: {'ok' if not failures else 'FAILED'}")
    for msg in failures:
        print(msg, file=sys.stderr)
    return 0 if not failures else 2


def _add_common_flags(sub):
    sub.add_argument("--config", help="flat key=value configuration file")
    sub.add_argument("--problem", choices=["example1", "example2"])
    sub.add_argument("--beta", type=float)
    sub.add_argument("--n", type=int)
    sub.add_argument("--n-rings", dest="n_rings", type=int)
    sub.add_argument("--n-sectors", dest="n_sectors", type=int)
    sub.add_argument("--gamma0", type=float)
    sub.add_argument("--delta0", type=float)
    sub.add_argument("--ratio", type=float)
    sub.add_argument("--forcing", choices=["constant", "adaptive"])
    sub.add_argument("--kappa", type=float)
    sub.add_argument("--nested-thresholds", dest="nested_thresholds", type=str)
    sub.add_argument("--out")
    sub.add_argument("--seed", type=int)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tvcontrol", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    solve = subs.add_parser("solve", help="run one continuation")
    _add_common_flags(solve)
    solve.set_defaults(func=cmd_solve)

    sweep = subs.add_parser("sweep", help="run a parameter sweep")
    _add_common_flags(sweep)
    sweep.add_argument("--parameter", choices=["sigma", "ratio", "beta"], required=True)
    sweep.add_argument("--values", required=True, help="comma- or space-separated values")
    sweep.set_defaults(func=cmd_sweep)

    verify = subs.add_parser("verify", help="run built-in oracle checks")
    verify.add_argument("--suite", default="all")
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
