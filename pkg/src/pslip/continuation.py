"""Path mu -> 0: regularized solves along a geometric schedule with warm starts.

The last iterate of the schedule stands in for the singular solution and is
validated through the weak form with the ``mu = 0`` flux.

With ``relative=True`` the schedule is measured in units of ``S^2`` where
``S = ||D u_lin||_inf^(1/(p-1))`` and ``u_lin`` solves the linear problem with
the same data. Scaling ``f -> lambda f`` then scales every ``mu_k`` by
``lambda^(2/(p-1))`` and the whole path by ``lambda^(1/(p-1))``, which is the
exact invariance of the regularized equation.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import VectorField, lq_norm, sym_grad, w1p_norm, w2q_surrogate
from .linear import ConstantsEstimate, LinearOperator, assemble, solve_linear
from .solver import NonConvergenceError, SlipProblem, SolveReport, fixed_point, weak_residual
from .stress import StressParams, b_times_D

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationSchedule:
    mu0: float = 1.0
    factor: float = 0.25
    steps: int = 8
    warm_start: bool = True
    relative: bool = False

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")

    def mus(self, scale: float = 1.0) -> np.ndarray:
        """``scale * mu0 * factor^k`` for ``k = 0..steps``."""
        return scale * self.mu0 * self.factor ** np.arange(self.steps + 1)


@dataclass
class ContinuationTrace:
    mus: list = field(default_factory=list)
    surrogate_norms: list = field(default_factory=list)
    step_increments_w1p: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    mu_scale: float = 1.0
    uniformity_ratio: float = float("nan")
    increments_decreasing: bool = True
    flux_ratios: list = field(default_factory=list)
    singular_weak_residual: float = float("nan")
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class ContinuationError(RuntimeError):
    def __init__(self, message, reports, trace):
        super().__init__(message)
        self.reports = reports
        self.trace = trace


def data_mu_scale(prob: SlipProblem, opA: LinearOperator | None = None) -> float:
    """``S^2`` with ``S = ||D u_lin||_inf^(1/(p-1))``; 1 when the data vanish."""
    opA = opA or assemble(prob.dom, prob.variant)
    u_lin = solve_linear(opA, prob.f)
    s = lq_norm(sym_grad(u_lin, prob.dom), np.inf, prob.dom)
    if s == 0:
        return 1.0
    return s ** (2.0 / (prob.p - 1.0))


def flux_difference_ratio(u_mu: VectorField, u0: VectorField, p: float, dom) -> float:
    """``||B0(Du^mu) Du^mu - B0(Du^0) Du^0||_{p'} / ||Du^mu - Du^0||_p^(p-1)`` with the ``mu = 0`` flux."""
    params = StressParams(p, 0.0)
    D1 = sym_grad(u_mu, dom).values
    D0 = sym_grad(u0, dom).values
    num = lq_norm(b_times_D(D1, params) - b_times_D(D0, params), p / (p - 1), dom)
    den = lq_norm(D1 - D0, p, dom) ** (p - 1)
    return num / den if den > 0 else 0.0


def run_continuation(prob: SlipProblem, sched: ContinuationSchedule, consts: ConstantsEstimate,
                     tol: float = 1e-10, max_iter: int = 500, opA: LinearOperator | None = None,
                     n_test: int = 20) -> tuple[VectorField, list[SolveReport], ContinuationTrace]:
    """Solve at ``mu_k = scale * mu0 * factor^k``, ``k = 0..steps``; the value of ``prob.mu`` is ignored.

    Returns the last iterate, the per-step reports and the continuation trace.
    """
    dom, p = prob.dom, prob.p
    opA = opA or assemble(dom, prob.variant)
    trace = ContinuationTrace()
    if sched.relative:
        trace.mu_scale = data_mu_scale(prob, opA)
    mus = sched.mus(trace.mu_scale)
    trace.mus = [float(m) for m in mus]
    if prob.variant.value == "bardos":
        trace.notes.append("bardos variant: the mu = 0 limit is experimental (no singular weak form is defined)")
    reports: list[SolveReport] = []
    fields: list[VectorField] = []
    u = None
    for mu in mus:
        step = prob.with_mu(float(mu))
        try:
            u, rep = fixed_point(step, consts, tol_fp=tol, max_iter=max_iter,
                                 u0=u if sched.warm_start else None, opA=opA)
        except NonConvergenceError as exc:
            reports.append(exc.report)
            raise ContinuationError(f"continuation step mu={mu:.3e} failed: {exc}", reports, trace) from exc
        reports.append(rep)
        fields.append(u)
        trace.surrogate_norms.append(w2q_surrogate(u, dom, prob.q))
        trace.iterations.append(rep.iterations)
        if len(fields) > 1:
            trace.step_increments_w1p.append(w1p_norm(fields[-1] - fields[-2], dom, p))
    s = np.asarray(trace.surrogate_norms)
    if s.size and s.min() > 0:
        trace.uniformity_ratio = float(s.max() / s.min())
    elif s.size:
        trace.uniformity_ratio = 1.0
    inc = np.asarray(trace.step_increments_w1p)
    trace.increments_decreasing = bool(np.all(np.diff(inc) <= 1e-12 * max(inc.max(initial=0), 1.0)))
    trace.flux_ratios = [flux_difference_ratio(v, u, p, dom) for v in fields[:-1]] if p < 2 else []
    trace.singular_weak_residual = singular_weak_residual(u, prob, n_test=n_test)
    return u, reports, trace


def singular_weak_residual(u0: VectorField, prob: SlipProblem, n_test: int = 20, relative: bool = True) -> float:
    """Weak residual of the ``mu = 0`` equation (guarded flux ``|Du|^(p-2) Du``, zero where ``Du = 0``).

    By default it is scaled by ``max_v |sum_w f.v| / ||v||`` so that it is
    comparable across data amplitudes.
    """
    return weak_residual(u0, prob.with_mu(0.0), n_test=n_test, relative=relative)


def homogeneity_check(prob: SlipProblem, lambda_list, consts: ConstantsEstimate,
                      sched: ContinuationSchedule | None = None, tol: float = 1e-11) -> float:
    """``max_lambda ||u(lambda f) - lambda^(1/(p-1)) u(f)||_2 / ||lambda^(1/(p-1)) u(f)||_2``.

    Both solves use the data-relative schedule, so the comparison isolates
    the numerical error.
    """
    if prob.mu != 0:
        raise ValueError("homogeneity holds for the singular problem only (mu = 0)")
    sched = sched or ContinuationSchedule(relative=True)
    if not sched.relative:
        raise ValueError("homogeneity_check needs a data-relative schedule")
    dom, p = prob.dom, prob.p
    opA = assemble(dom, prob.variant)
    base, _, _ = run_continuation(prob, sched, consts, tol=tol, opA=opA)
    worst = 0.0
    for lam in lambda_list:
        scaled, _, _ = run_continuation(prob.with_f(prob.f * lam), sched, consts, tol=tol, opA=opA)
        ref = base * lam ** (1.0 / (p - 1.0))
        nref = lq_norm(ref, 2, dom)
        dev = lq_norm(scaled - ref, 2, dom)
        worst = max(worst, dev / nref if nref > 0 else dev)
    return worst
