"""Command-line front end.

Subcommands: solve | continuation | linsolve | constants | identities | mms | exponents.

Exit status: 0 success, 1 usage or configuration error, 2 the sampled gate
fails and the iteration diverges, 3 any other solver failure or failed check.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .continuation import ContinuationError, ContinuationSchedule, run_continuation
from .exponents import (
    ExponentParams,
    GateViolation,
    RadiusInputs,
    ball_radius,
    contraction_gate,
    critical_r,
    q_hat,
)
from .grid import (
    BcVariant,
    Domain,
    VectorField,
    dump_tensor_csv,
    dump_vector_csv,
    lq_norm,
    mms_field,
    mms_forcing,
    mms_forcing_linear,
    smooth_random_field,
    sym_grad,
)
from .identities import format_table, run_battery
from .linear import ConstantsEstimate, assemble, dump_matrix, estimate_Cq, estimate_constants, solve_linear
from .solver import GateWarning, NonConvergenceError, SlipProblem, fixed_point
from .stress import StressParams

log = logging.getLogger("pslip")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_FAILED = 0, 1, 2, 3
FORCINGS = ("mms", "zero", "random")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    Lx: float = 1.0
    Ly: float = 0.7
    grid: int = 32
    grids: list = field(default_factory=lambda: [16, 32, 64])
    p: float = 1.9
    mu: float = 1.0
    q: float = 4.0
    n: int = 2
    bc: str = "navier"
    forcing: str = "mms"
    amplitude: float = 1.0
    scale: float = 1.0
    tol_fp: float = 1e-10
    tol_lin: float = 1e-12
    max_iter: int = 500
    theta: float | None = None
    g_form: str = "conservative"
    linear_method: str = "auto"
    mu0: float = 1.0
    factor: float = 0.25
    steps: int = 8
    warm_start: bool = True
    relative_schedule: bool = False
    n_samples: int = 200
    seed: int = 0
    dump_matrix: bool = False
    out: str = "pslip_out"

    def validate(self) -> "RunConfig":
        try:
            BcVariant.parse(self.bc)
            StressParams(self.p, self.mu)
            ContinuationSchedule(self.mu0, self.factor, self.steps, self.warm_start, self.relative_schedule)
            self.domain()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.forcing not in FORCINGS:
            raise ConfigError(f"forcing must be one of {FORCINGS}, got {self.forcing!r}")
        if self.q <= 1:
            raise ConfigError(f"q must exceed 1, got {self.q}")
        if self.g_form not in ("conservative", "pointwise"):
            raise ConfigError(f"unknown g_form {self.g_form!r}")
        if self.linear_method not in ("auto", "cg", "direct"):
            raise ConfigError(f"unknown linear_method {self.linear_method!r}")
        if len(self.grids) < 2 or any(int(g) < 3 for g in self.grids):
            raise ConfigError("grids needs at least two sizes, each >= 3")
        if self.n_samples < 1 or self.max_iter < 1:
            raise ConfigError("n_samples and max_iter must be positive")
        return self

    def domain(self, N: int | None = None) -> Domain:
        N = self.grid if N is None else int(N)
        return Domain(self.Lx, self.Ly, N, N)

    def schedule(self) -> ContinuationSchedule:
        return ContinuationSchedule(self.mu0, self.factor, self.steps, self.warm_start, self.relative_schedule)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# helpers


def jsonable(obj):
    """Recursively convert numpy values; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if dataclasses.is_dataclass(obj):
        return jsonable(asdict(obj))
    return obj


def write_report(out: Path, name: str, report: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n")
    return path


def build_forcing(cfg: RunConfig, dom: Domain, p: float | None = None, mu: float | None = None) -> VectorField:
    p = cfg.p if p is None else p
    mu = cfg.mu if mu is None else mu
    if cfg.forcing == "zero":
        return VectorField.zeros(dom)
    if cfg.forcing == "random":
        f = smooth_random_field(dom, np.random.default_rng(cfg.seed), modes=3, tangent=False)
        return VectorField(f.values * cfg.scale)
    return VectorField(mms_forcing(dom, p, mu, cfg.amplitude).values * cfg.scale)


def build_problem(cfg: RunConfig, dom: Domain | None = None) -> SlipProblem:
    dom = dom or cfg.domain()
    return SlipProblem(dom, StressParams(cfg.p, cfg.mu), cfg.q, build_forcing(cfg, dom), cfg.bc)


def constants_for(cfg: RunConfig, dom: Domain) -> ConstantsEstimate:
    return estimate_constants(dom, cfg.q, cfg.p, cfg.bc, n_samples=cfg.n_samples, seed=cfg.seed)


def mms_error(cfg: RunConfig, u: VectorField, dom: Domain) -> float | None:
    if cfg.forcing != "mms" or cfg.scale != 1.0:
        return None
    ref = mms_field(dom, cfg.amplitude)
    return lq_norm(u - ref, 2, dom) / lq_norm(ref, 2, dom)


def dump_fields(u: VectorField, dom: Domain, out: Path, stem: str = "u") -> None:
    out.mkdir(parents=True, exist_ok=True)
    dump_vector_csv(u, dom, out / f"{stem}.csv")
    dump_tensor_csv(u, sym_grad(u, dom), dom, out / f"{stem}_D.csv")


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    dom = cfg.domain()
    if cfg.mu <= 0 and cfg.p < 2:
        print("solve needs mu > 0 when p < 2; use the continuation command", file=sys.stderr)
        return EXIT_USAGE
    prob = build_problem(cfg, dom)
    consts = constants_for(cfg, dom)
    report = {"command": "solve", "config": asdict(cfg), "version": __version__}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GateWarning)
        try:
            u, rep = fixed_point(prob, consts, tol_fp=cfg.tol_fp, max_iter=cfg.max_iter, theta=cfg.theta,
                                 g_form=cfg.g_form, tol_lin=cfg.tol_lin)
        except NonConvergenceError as exc:
            report.update(status="diverged", message=str(exc), solve=exc.report.to_dict())
            write_report(out, "report.json", report)
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAILED if exc.report.gate_satisfied else EXIT_DIVERGED
    report.update(status="ok", solve=rep.to_dict(), warnings=[str(w.message) for w in caught])
    report["mms_relative_l2_error"] = mms_error(cfg, u, dom)
    write_report(out, "report.json", report)
    dump_fields(u, dom, out)
    print(f"converged in {rep.iterations} iterations ({rep.corrections} corrections); "
          f"weak residual {rep.weak_residual:.3e}; R = {rep.R:.4g}; all iterates in ball: {rep.all_in_ball}")
    return EXIT_OK


def cmd_continuation(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    dom = cfg.domain()
    cfg_mu0 = dataclasses.replace(cfg, mu=0.0)
    prob = build_problem(cfg_mu0, dom)
    consts = constants_for(cfg, dom)
    report = {"command": "continuation", "config": asdict(cfg), "version": __version__}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GateWarning)
        try:
            u, reps, trace = run_continuation(prob, cfg.schedule(), consts, tol=cfg.tol_fp, max_iter=cfg.max_iter)
        except ContinuationError as exc:
            report.update(status="diverged", message=str(exc), steps=[r.to_dict() for r in exc.reports],
                          trace=exc.trace.to_dict())
            write_report(out, "report.json", report)
            print(f"error: {exc}", file=sys.stderr)
            gate = exc.reports[-1].gate_satisfied if exc.reports else True
            return EXIT_FAILED if gate else EXIT_DIVERGED
    report.update(status="ok", trace=trace.to_dict(), steps=[r.to_dict() for r in reps])
    report["mms_relative_l2_error"] = mms_error(cfg_mu0, u, dom)
    write_report(out, "report.json", report)
    dump_fields(u, dom, out)
    print(f"{len(reps)} steps, final mu = {trace.mus[-1]:.3e}; surrogate max/min = {trace.uniformity_ratio:.4f}; "
          f"mu=0 weak residual {trace.singular_weak_residual:.3e}")
    return EXIT_OK


def cmd_linsolve(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    dom = cfg.domain()
    opA = assemble(dom, cfg.bc)
    if cfg.forcing == "mms":
        F = VectorField(mms_forcing_linear(dom, cfg.amplitude).values * cfg.scale)
    else:
        F = build_forcing(cfg, dom)
    t0 = time.perf_counter()
    u = solve_linear(opA, F, tol=cfg.tol_lin, method=cfg.linear_method)
    report = {"command": "linsolve", "config": asdict(cfg), "version": __version__, "status": "ok",
              "wall_time": time.perf_counter() - t0, "unknowns": opA.ops.nfree,
              "mms_relative_l2_error": mms_error(cfg, u, dom)}
    write_report(out, "report.json", report)
    dump_fields(u, dom, out)
    if cfg.dump_matrix:
        dump_matrix(opA, out / "matrix.txt")
    print(f"linear solve on {dom.Nx}x{dom.Ny}: {opA.ops.nfree} unknowns; "
          f"MMS error {report['mms_relative_l2_error']}")
    return EXIT_OK


def cmd_constants(cfg: RunConfig) -> int:
    dom = cfg.domain()
    consts = constants_for(cfg, dom)
    alpha, ok = contraction_gate(cfg.p, consts.Cq_disc)
    prob = build_problem(cfg, dom)
    fq = lq_norm(prob.f, cfg.q, dom)
    try:
        R = ball_radius(RadiusInputs(consts.Cq_disc, consts.Chat_disc, fq, alpha), ExponentParams(cfg.p, cfg.q, 2, cfg.mu))
    except GateViolation:
        R = None
    # growth of Cq in q is recorded only, no trend is asserted
    opA = assemble(dom, cfg.bc)
    sweep = {str(q): estimate_Cq(opA, q, n_samples=max(1, cfg.n_samples // 4), seed=cfg.seed).Cq_disc
             for q in (2.0, 3.0, 4.0, 6.0)}
    report = {"command": "constants", "config": asdict(cfg), "version": __version__, "status": "ok",
              "constants": consts.to_dict(), "alpha": alpha, "gate_satisfied": ok, "fnorm_q": fq, "R": R,
              "Cq_by_q": sweep,
              "note": "sampled lower bounds; the gate check is a heuristic diagnostic"}
    write_report(Path(cfg.out), "constants.json", report)
    print(f"Cq={consts.Cq_disc:.6g} Chat={consts.Chat_disc:.6g} korn={consts.korn_disc:.6g} "
          f"alpha={alpha:.6g} gate={'satisfied' if ok else 'violated'} R={R}")
    return EXIT_OK


def cmd_identities(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    reports = run_battery(tuple(int(g) for g in cfg.grids), p=1.7 if cfg.p == 2 else cfg.p,
                          mu=cfg.mu if cfg.mu > 0 else 1.0)
    table = format_table(reports)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "identities.txt").write_text(table + "\n")
    ok = all(r.passed for r in reports)
    write_report(out, "identities.json", {"command": "identities", "config": asdict(cfg), "version": __version__,
                                          "status": "ok" if ok else "failed",
                                          "wall_time": time.perf_counter() - t0,
                                          "reports": [r.to_dict() for r in reports]})
    print(table)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_mms(cfg: RunConfig) -> int:
    from .identities import observed_order

    if cfg.mu <= 0 and cfg.p < 2:
        print("the MMS study needs mu > 0 when p < 2", file=sys.stderr)
        return EXIT_USAGE
    rows = []
    for N in cfg.grids:
        dom = cfg.domain(N)
        ref = mms_field(dom, cfg.amplitude)
        f = mms_forcing(dom, cfg.p, cfg.mu, cfg.amplitude)
        prob = SlipProblem(dom, StressParams(cfg.p, cfg.mu), cfg.q, f, cfg.bc)
        consts = ConstantsEstimate(Cq_disc=1.0, Chat_disc=float("nan"), korn_disc=float("nan"), q=cfg.q, samples=0,
                                   method="not estimated (convergence study)")
        t0 = time.perf_counter()
        try:
            u, rep = fixed_point(prob, consts, tol_fp=cfg.tol_fp, max_iter=cfg.max_iter, g_form=cfg.g_form)
        except NonConvergenceError as exc:
            print(f"error on grid {N}: {exc}", file=sys.stderr)
            return EXIT_FAILED
        err = lq_norm(u - ref, 2, dom) / lq_norm(ref, 2, dom)
        rows.append({"grid": int(N), "h": dom.h, "error": err, "iterations": rep.iterations,
                     "wall_time": time.perf_counter() - t0})
    order = observed_order([r["h"] for r in rows], [r["error"] for r in rows])
    write_report(Path(cfg.out), "mms.json", {"command": "mms", "config": asdict(cfg), "version": __version__,
                                            "status": "ok", "rows": rows, "observed_order": order})
    for r in rows:
        print(f"N={r['grid']:4d} h={r['h']:.5f} error={r['error']:.4e} iterations={r['iterations']}")
    print(f"observed order {order:.3f}")
    return EXIT_OK


def cmd_exponents(cfg: RunConfig) -> int:
    try:
        qh = q_hat(cfg.n, cfg.p)
        r2 = critical_r(2.0, cfg.n, cfg.p)
        rq = critical_r(cfg.q, cfg.n, cfg.p)
        rqh = critical_r(qh, cfg.n, cfg.p)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"p={cfg.p} n={cfg.n}: q_hat={qh:.6g} r(2)={r2:.6g} r({cfg.q:g})={rq:.6g} r(q_hat)={rqh:.12g} "
          f"r(n)={critical_r(cfg.n, cfg.n, cfg.p):.12g}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "continuation": cmd_continuation,
    "linsolve": cmd_linsolve,
    "constants": cmd_constants,
    "identities": cmd_identities,
    "mms": cmd_mms,
    "exponents": cmd_exponents,
}


# ---------------------------------------------------------------------------
# argument parsing


HELP = {
    "solve": "fixed-point solve at the given p and mu (mu > 0 when p < 2)",
    "continuation": "mu -> 0 path with warm starts; reports the singular weak residual",
    "linsolve": "linear slip problem -div(Du) = f only",
    "constants": "sampled discrete constants and the contraction gate",
    "identities": "identity battery over the grid sequence",
    "mms": "manufactured-solution convergence study over the grid sequence",
    "exponents": "critical exponents r(q) and q_hat for p and n",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (unknown keys rejected)")
    common.add_argument("--grid", type=int, help="interior nodes per axis")
    common.add_argument("--grids", type=int, nargs="+", help="grid sequence for mms and identities")
    common.add_argument("--p", type=float)
    common.add_argument("--mu", type=float)
    common.add_argument("--q", type=float)
    common.add_argument("--n", type=int, help="space dimension for the exponents command")
    common.add_argument("--bc", choices=[v.value for v in BcVariant])
    common.add_argument("--forcing", choices=FORCINGS)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--dump-config", action="store_true", help="print the resolved config as JSON and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="pslip", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


OVERRIDES = ("grid", "grids", "p", "mu", "q", "n", "bc", "forcing", "out", "seed")


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    updates = {k: getattr(args, k) for k in OVERRIDES if getattr(args, k) is not None}
    return RunConfig.from_dict({**asdict(cfg), **updates})


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.dump_config:
        print(cfg.to_json())
        return EXIT_OK
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
