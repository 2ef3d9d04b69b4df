"""Command line front end.

Exit codes: 0 correct (or all rows passed), 2 incorrect (or evolve refused,
or some certificate rows failed), 3 inconclusive, 1 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CertificateInvalidError, ExpOverflowError, InfeasibleError, PetrosemError
from .io import load_operator, write_csv
from .matfun import (eigenvalues, eval_poly_at_matrix, eval_power_at_matrix, exp_scaled,
                     gelfand_shilov_log_bound, newton_interp_exp, power_coeffs_contour,
                     propagator_decomposition)
from .semigroup import (GridState, build_propagator, evolve, make_grid, sobolev_norm)
from .stability import estimate_stability_index, sphere_directions
from .symbol import OperatorSpec, eval_symbol
from .weighted import ek_certificate, verify_ek_decay

log = logging.getLogger("petrosem")

EXIT = {"correct": 0, "incorrect": 2, "inconclusive": 3}
COMMANDS = ("analyze", "evolve", "expcheck", "certify")


@dataclass
class RunConfig:
    command: str
    op_path: Path
    out: Path
    N: int = 64
    L: float = 2 * np.pi
    t: float = 1.0
    dt: float = 0.1
    spaces: list = field(default_factory=lambda: ["hinf"])
    j: int = 0
    budget: int = 10_000
    rmax: float = 1e3
    omega1: float | None = None
    seed: int = 0
    force: bool = False

    def meta(self) -> dict:
        return {"cmd": self.command, "seed": self.seed}


def _parse_length(text: str) -> float:
    # products such as "2*pi" or "4pi"
    val = 1.0
    for factor in text.replace("pi", "*pi").split("*"):
        factor = factor.strip()
        if factor:
            val *= np.pi if factor == "pi" else float(factor)
    return val


def _parse_grid(text: str):
    try:
        N, L = text.split(",")
        return int(N), _parse_length(L)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--grid expects N,L (e.g. 64,2*pi), got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="petrosem", description="Stability analysis of constant-coefficient evolution systems")
    p.add_argument("--op", required=True, help="operator JSON file")
    p.add_argument("--cmd", required=True, choices=COMMANDS)
    p.add_argument("--grid", type=_parse_grid, default=(64, 2 * np.pi), help="N,L (L may use pi)")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--space", default="hinf", help="comma list of cb, hinf, ppow")
    p.add_argument("--j", type=int, default=0)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--rmax", type=float, default=1e3)
    p.add_argument("--omega1", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="petrosem_out")
    p.add_argument("--force", action="store_true", help="evolve even when the operator is incorrect")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"petrosem {__version__}")
    return p


def config_from_args(args) -> RunConfig:
    N, L = args.grid
    return RunConfig(
        command=args.cmd, op_path=Path(args.op), out=Path(args.out), N=N, L=L, t=args.t,
        dt=args.dt, spaces=[s.strip().lower() for s in args.space.split(",") if s.strip()],
        j=args.j, budget=args.budget, rmax=args.rmax, omega1=args.omega1, seed=args.seed,
        force=args.force,
    )


def _json_float(x: float):
    return x if np.isfinite(x) else ("unbounded" if x > 0 else "-inf")


# ---------------------------------------------------------------- analyze


def cmd_analyze(cfg: RunConfig, op: OperatorSpec) -> int:
    rep = estimate_stability_index(op, budget=cfg.budget, r_max=cfg.rmax, seed=cfg.seed)
    fit = rep.fit
    doc = {
        "version": __version__, "seed": cfg.seed, "verdict": rep.verdict,
        "omega0_estimate": _json_float(rep.omega0_estimate),
        "max_observed_abscissa": rep.max_observed, "argmax_xi": rep.argmax_xi.tolist(),
        "log_growth_constant": _json_float(rep.log_growth_constant),
        "log_growth_passes": rep.log_growth_passes,
        "fit": {"A": fit.A, "alpha": fit.alpha, "residual": _json_float(fit.residual),
                "alpha_raw": _json_float(fit.alpha_raw), "snapped": str(fit.snapped) if fit.snapped is not None else None,
                "plateau": fit.plateau, "window": list(fit.window)},
        "samples": rep.n_samples, "budget": rep.budget, "budget_exhausted": rep.budget_exhausted,
        "r_max": rep.r_max, "constants": rep.constants, "note": rep.note,
        "evidence": [{"xi": s.xi.tolist(), "abscissa": s.abscissa} for s in rep.evidence],
    }
    (cfg.out / "report.json").write_text(json.dumps(doc, indent=1))
    write_csv(cfg.out / "lambda.csv", ["r", "Lambda"], zip(rep.shell_radii, rep.shell_lambda), cfg.meta())
    print(f"verdict: {rep.verdict}")
    print(f"omega0: {_json_float(rep.omega0_estimate)}")
    print(f"garding fit: A={fit.A:.6g} alpha={fit.alpha:.6g} residual={fit.residual:.3g}")
    print(f"log-growth constant C={rep.log_growth_constant:.6g} passes={rep.log_growth_passes}")
    c = rep.constants
    print(f"constants: k={c['k']} k_alpha(|alpha|=1)={c['k_alpha_1']} k_alpha(|alpha|=2)={c['k_alpha_2']} k0={c['k0']}")
    print(f"samples: {rep.n_samples}/{rep.budget} seed={cfg.seed}")
    return EXIT[rep.verdict]


# ----------------------------------------------------------------- evolve


def initial_bump(grid, m: int) -> GridState:
    """Band-limited bump: a periodic Gaussian with modes above ``N/4`` removed."""
    x = grid.points() - grid.L / 2
    width = grid.L / 10
    g = np.exp(-np.sum(x ** 2, axis=-1) / (2 * width ** 2))
    c = grid.to_modes(np.broadcast_to(g, (m,) + grid.shape).astype(complex))
    c = c * grid.band_mask(grid.N // 4)[None]
    return GridState.from_modes(grid, c)


def cmd_evolve(cfg: RunConfig, op: OperatorSpec) -> int:
    rep = estimate_stability_index(op, budget=min(cfg.budget, 2000), r_max=cfg.rmax, seed=cfg.seed)
    if rep.verdict == "incorrect" and not cfg.force:
        print("refusing to evolve an incorrect operator (ill-posed); pass --force to override",
              file=sys.stderr)
        return 2
    grid = make_grid(op.n, cfg.N, cfg.L)
    steps = int(round(cfg.t / cfg.dt))
    if steps < 1 or abs(steps * cfg.dt - cfg.t) > 1e-9 * max(1.0, abs(cfg.t)):
        raise PetrosemError("--t must be a positive multiple of --dt")
    table = build_propagator(op, grid, cfg.dt)
    u = initial_bump(grid, op.m)
    header = ["t"] + [f"{s}_j{cfg.j}" for s in cfg.spaces] + [f"log_{s}_j{cfg.j}" for s in cfg.spaces]
    rows = []

    def record(k, state):
        logs = []
        for s in cfg.spaces:
            base = sobolev_norm(GridState(grid, state.values), s, cfg.j, op)
            logs.append(np.log(base) + state.log_scale if base > 0 else -np.inf)
        vals = [np.exp(v) if v < 709 else np.inf for v in logs]
        rows.append([k * cfg.dt] + vals + logs)

    record(0, u)
    for k in range(1, steps + 1):
        u = evolve(u, table, 1)
        record(k, u)
    write_csv(cfg.out / "norms.csv", header, rows, cfg.meta())
    np.savez(cfg.out / "final_state.npz", values=u.values, log_scale=u.log_scale,
             n=grid.n, N=grid.N, L=grid.L, t=cfg.t, seed=cfg.seed)
    print(f"evolved {steps} steps to t={cfg.t} (verdict {rep.verdict}); final "
          + ", ".join(f"{s}={rows[-1][1 + i]:.6g}" for i, s in enumerate(cfg.spaces)))
    return 0


# --------------------------------------------------------------- expcheck


def sample_frequencies(n: int, r_max: float, per_decade: int = 2, ndir: int | None = None) -> np.ndarray:
    radii = np.concatenate([[0.0], 10.0 ** np.arange(-1, np.log10(r_max) + 1e-9, 1.0 / per_decade)])
    dirs = sphere_directions(n, ndir or (2 if n == 1 else 2 * n + 2))
    xis = (radii[:, None, None] * dirs[None]).reshape(-1, n)
    return xis[len(dirs) - 1:] + 0.0  # no negative zeros in output


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def expcheck_row(op: OperatorSpec, xi, t: float) -> list:
    P = eval_symbol(op, xi)
    E, off = exp_scaled(P, t)
    s = off / t if t else float(np.linalg.eigvals(P).real.max())
    M = P - s * np.eye(op.m)
    nodes = eigenvalues(M)
    newton = eval_poly_at_matrix(newton_interp_exp(nodes, t), M)
    contour = eval_power_at_matrix(power_coeffs_contour(nodes, t), M)
    actual = np.linalg.norm(E, 2)
    margin = gelfand_shilov_log_bound(M, t) - (np.log(actual) if actual > 0 else -np.inf)
    dec = propagator_decomposition(op, t, xi, check=False)
    return [*np.atleast_1d(xi), t, _rel(newton, E), _rel(contour, E), margin, dec.residual]


def cmd_expcheck(cfg: RunConfig, op: OperatorSpec) -> int:
    xis = sample_frequencies(op.n, min(cfg.rmax, 50.0))
    times = [0.0, cfg.t / 4, cfg.t / 2, cfg.t]
    rows = [expcheck_row(op, xi, t) for xi in xis for t in times]
    header = [f"xi{i}" for i in range(op.n)] + ["t", "err_newton", "err_contour",
                                                  "gelfand_shilov_log_margin", "decomposition_residual"]
    write_csv(cfg.out / "expcheck.csv", header, rows, cfg.meta())
    worst = max(max(r[op.n + 1], r[op.n + 2], r[op.n + 4]) for r in rows)
    min_margin = min(r[op.n + 3] for r in rows)
    print(f"{len(rows)} rows; worst residual {worst:.3e}; min Gelfand-Shilov log margin {min_margin:.3e}")
    return 0 if worst <= 1e-8 and min_margin >= -1e-12 else 2


# ---------------------------------------------------------------- certify


def cmd_certify(cfg: RunConfig, op: OperatorSpec) -> int:
    if cfg.omega1 is None:
        raise PetrosemError("certify needs --omega1")
    xis = sample_frequencies(op.n, cfg.rmax, per_decade=4)
    t_grid = np.linspace(0.0, max(cfg.t, 1e-3), 21)
    rows, failed = [], 0
    for xi in xis:
        absc = float(np.linalg.eigvals(eval_symbol(op, xi)).real.max())
        try:
            cert = ek_certificate(op, xi, cfg.omega1)
            slope = verify_ek_decay(cert, op, t_grid)
            status = "ok" if cert.valid else "invalid"
            r0, r1 = cert.residuals
        except InfeasibleError:
            status, r0, r1, slope = "infeasible", np.nan, np.nan, np.nan
        except CertificateInvalidError:
            status, r0, r1, slope = "invalid", np.nan, np.nan, np.nan
        failed += status != "ok"
        rows.append([*xi, cfg.omega1, absc, r0, r1, slope, status])
    header = [f"xi{i}" for i in range(op.n)] + ["omega1", "abscissa", "min_eig_B_minus_1",
                                                  "max_eig_lyapunov", "weighted_slope", "status"]
    write_csv(cfg.out / "certificates.csv", header, rows, cfg.meta())
    print(f"{len(rows)} rows; {failed} infeasible or invalid")
    return 0 if failed == 0 else 2


HANDLERS = {"analyze": cmd_analyze, "evolve": cmd_evolve, "expcheck": cmd_expcheck, "certify": cmd_certify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        op = load_operator(cfg.op_path)
        cfg.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[cfg.command](cfg, op)
    except (PetrosemError, OSError, ExpOverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
