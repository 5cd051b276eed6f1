"""Strong-solution fixed-point iteration for ``mu > 0``.

Each step solves the linear slip problem ``-div(D u) = F(v)`` with
``F(v) = (p-2) G(v) + (mu + |Dv|^2)^((2-p)/2) f``. Two discretizations of the
``G`` term are available:

* ``"conservative"`` (default) evaluates ``(p-2) G(v)`` as
  ``B^-1 div(B Dv) - div(Dv)`` with the same divergence stencil as the
  linear operator, so fixed points solve the discrete divergence-form
  equation ``-div(B Du) = f`` exactly (and hence coincide with the energy
  minimizer of :mod:`pslip.oracle`);
* ``"pointwise"`` uses the closed formula ``G = I / (mu + |Dv|^2)``.

Both are second-order consistent with the continuous map.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .exponents import ball_radius, contraction_gate, ExponentParams, RadiusInputs, MU_EXPONENT_NOTE
from .grid import (
    BcVariant,
    Domain,
    VectorField,
    apply_slip_bc,
    div_tensor,
    lq_norm,
    smooth_random_field,
    sym_grad,
    w1p_norm,
    w2q_surrogate,
)
from .linear import ConstantsEstimate, LinearOperator, assemble, solve_free, solve_linear
from .stress import StressParams, b_inverse, b_times_D, g_vector, nodal_quantities

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class GateWarning(UserWarning):
    """The sampled contraction gate ``(2-p) Cq < 1`` does not hold."""


@dataclass
class SlipProblem:
    dom: Domain
    params: StressParams
    q: float
    f: VectorField
    variant: BcVariant = BcVariant.NAVIER

    def __post_init__(self):
        self.variant = BcVariant.parse(self.variant)
        if self.q <= 1:
            raise ValueError(f"q must exceed 1, got {self.q}")

    @property
    def p(self) -> float:
        return self.params.p

    @property
    def mu(self) -> float:
        return self.params.mu

    def with_mu(self, mu: float) -> "SlipProblem":
        return SlipProblem(self.dom, StressParams(self.p, mu), self.q, self.f, self.variant)

    def with_f(self, f: VectorField) -> "SlipProblem":
        return SlipProblem(self.dom, self.params, self.q, f, self.variant)

    def with_variant(self, variant) -> "SlipProblem":
        return SlipProblem(self.dom, self.params, self.q, self.f, variant)


@dataclass
class SolveReport:
    iterations: int = 0
    corrections: int = 0
    converged: bool = False
    theta: float = 1.0
    surrogate_norms: list = field(default_factory=list)
    increments_l2: list = field(default_factory=list)
    increments_w1p: list = field(default_factory=list)
    bound_ratios: list = field(default_factory=list)
    R: float = float("nan")
    alpha: float = float("nan")
    gate_satisfied: bool = False
    all_in_ball: bool = True
    increments_monotone: bool = True
    strong_residual: float = float("nan")
    weak_residual: float = float("nan")
    wall_time: float = 0.0
    g_form: str = "conservative"
    constants: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# discrete nonlinear operator on the free unknowns


class _Kernel:
    """Flux, strong operator and fixed-point map on free-unknown vectors."""

    def __init__(self, prob: SlipProblem, opA: LinearOperator | None = None):
        self.prob = prob
        self.opA = opA or assemble(prob.dom, prob.variant)
        self.ops = self.opA.ops
        self.f_free = self.ops.to_free(prob.f)
        nodes = np.concatenate(self.ops.idx)
        self._nodes = nodes

    def flux(self, x):
        d = self.ops.sym(x)
        p, mu = self.prob.p, self.prob.mu
        s = mu + d[0] ** 2 + 2 * d[1] ** 2 + d[2] ** 2
        if p == 2:
            return d, s
        with np.errstate(divide="ignore"):
            b = np.where(s > 0, np.where(s > 0, s, 1.0) ** ((p - 2) / 2), 0.0)
        return b * d, s

    def strong(self, x):
        """``-div(B Du)`` at the free unknowns."""
        t, _ = self.flux(x)
        return self.ops.strong(t)

    def weak_residual_vector(self, x):
        t, _ = self.flux(x)
        return self.ops.weak(t) - self.ops.wfree * self.f_free

    def binv_free(self, s):
        return s[self._nodes] ** ((2 - self.prob.p) / 2)

    def increment_load(self, x):
        """``w * [F(v) + div(D v)]`` for the conservative load."""
        t, s = self.flux(x)
        return self.ops.wfree * self.binv_free(s) * (self.f_free - self.ops.strong(t))


def rhs_F_conservative(v: VectorField, prob: SlipProblem, opA: LinearOperator | None = None) -> VectorField:
    """``F(v) = -div(Dv) + B^-1 (f + div(B Dv))`` on the free unknowns."""
    if prob.p == 2:
        return VectorField(prob.f.values.copy())
    k = _Kernel(prob, opA)
    x = k.ops.to_free(v)
    t, s = k.flux(x)
    Lx = k.ops.strong(k.ops.sym(x))
    F = Lx + k.binv_free(s) * (k.f_free - k.ops.strong(t))
    return k.ops.to_field(F)


def rhs_F_pointwise(v: VectorField, prob: SlipProblem) -> VectorField:
    from .stress import rhs_F

    return rhs_F(v, prob.f, prob.params, prob.dom)


def map_T(v: VectorField, prob: SlipProblem, consts: ConstantsEstimate | None = None, tol: float = 1e-12,
          opA: LinearOperator | None = None, g_form: str = "conservative") -> VectorField:
    """``T(v)``: solve ``-div(D u) = F(v)`` under the slip condition."""
    if prob.mu <= 0 and prob.p < 2:
        raise ValueError("the fixed-point map needs mu > 0")
    opA = opA or assemble(prob.dom, prob.variant)
    if g_form == "conservative":
        F = rhs_F_conservative(v, prob, opA)
    elif g_form == "pointwise":
        F = rhs_F_pointwise(v, prob)
    else:
        raise ValueError(f"unknown g_form {g_form!r}")
    return solve_linear(opA, F, tol=tol)


def bound_rhs(v_norm: float, f_norm: float, prob: SlipProblem, consts: ConstantsEstimate) -> float:
    """Right side of ``||grad D T(v)||_q <= Cq{(2-p)||grad Dv|| + mu^((2-p)/2)||f|| + Chat^(2-p)||grad Dv||^(2-p)||f||}``."""
    p, mu = prob.p, prob.mu
    chat = consts.Chat_disc if np.isfinite(consts.Chat_disc) else 0.0
    return consts.Cq_disc * ((2 - p) * v_norm + mu ** ((2 - p) / 2) * f_norm
                             + chat ** (2 - p) * v_norm ** (2 - p) * f_norm)


def fixed_point(prob: SlipProblem, consts: ConstantsEstimate, tol_fp: float = 1e-10, max_iter: int = 500,
                theta: float | None = None, u0: VectorField | None = None, g_form: str = "conservative",
                opA: LinearOperator | None = None, tol_lin: float = 1e-12,
                adaptive: bool = True) -> tuple[VectorField, SolveReport]:
    """Iterate ``u_{k+1} = (1-theta) u_k + theta T(u_k)`` until the relative ``W^{1,p}`` increment is below ``tol_fp``."""
    if prob.mu <= 0 and prob.p < 2:
        raise ValueError("fixed_point needs mu > 0; use continuation for the singular case")
    t0 = time.perf_counter()
    dom, p, q = prob.dom, prob.p, prob.q
    opA = opA or assemble(dom, prob.variant)
    kern = _Kernel(prob, opA)
    ops = kern.ops

    alpha, ok = contraction_gate(p, consts.Cq_disc)
    report = SolveReport(alpha=alpha, gate_satisfied=ok, g_form=g_form, constants=consts.to_dict())
    report.notes.append(MU_EXPONENT_NOTE)
    report.notes.append("stopping rule: relative W^{1,p} increment (the existence argument is not a contraction)")
    f_norm = lq_norm(prob.f, q, dom)
    if ok and np.isfinite(consts.Chat_disc):
        report.R = ball_radius(RadiusInputs(consts.Cq_disc, consts.Chat_disc, f_norm, alpha),
                               ExponentParams(p, q, 2, prob.mu))
    if theta is None:
        theta = 1.0 if ok else 0.5
    if not ok:
        warnings.warn(f"sampled gate (2-p)Cq = {(2 - p) * consts.Cq_disc:.3f} >= 1; damping with theta={theta}",
                      GateWarning, stacklevel=2)
    report.theta = theta

    x = np.zeros(ops.nfree) if u0 is None else ops.to_free(apply_slip_bc(u0, prob.variant, dom))
    u = ops.to_field(x)
    v_norm = w2q_surrogate(u, dom, q)
    report.surrogate_norms.append(v_norm)
    growth = 0
    for k in range(1, max_iter + 1):
        if g_form == "conservative":
            if p == 2:
                Tx = solve_free(opA, opA.load(prob.f), tol=tol_lin)
            else:
                Tx = x + solve_free(opA, kern.increment_load(x), tol=tol_lin)
        else:
            Tx = ops.to_free(map_T(u, prob, consts, tol_lin, opA, g_form))
        Tu = ops.to_field(Tx)
        Tnorm = w2q_surrogate(Tu, dom, q)
        rhs = bound_rhs(v_norm, f_norm, prob, consts)
        report.bound_ratios.append(Tnorm / rhs if rhs > 0 else 0.0)

        x_new = (1 - theta) * x + theta * Tx
        u_new = ops.to_field(x_new)
        diff = u_new - u
        inc_l2 = lq_norm(diff, 2, dom)
        num = w1p_norm(diff, dom, p)
        den = w1p_norm(u_new, dom, p)
        rel = num / den if den > 0 else (0.0 if num == 0 else np.inf)
        report.increments_l2.append(inc_l2)
        report.increments_w1p.append(rel)
        x, u = x_new, u_new
        v_norm = w2q_surrogate(u, dom, q)
        report.surrogate_norms.append(v_norm)
        if np.isfinite(report.R) and v_norm > report.R * 1.1:
            report.all_in_ball = False
        report.iterations = k
        if not np.isfinite(rel):
            break
        if rel <= tol_fp:
            report.converged = True
            break
        if len(report.increments_w1p) > 1 and rel > report.increments_w1p[-2]:
            report.increments_monotone = False
            growth += 1
            if adaptive and growth >= 3 and theta > 1 / 64:
                theta *= 0.5
                growth = 0
                report.notes.append(f"increments grew; theta reduced to {theta} at iteration {k}")
        else:
            growth = 0
    report.theta = theta
    report.corrections = max(report.iterations - 1, 0)
    report.strong_residual = strong_residual(u, prob)
    report.weak_residual = weak_residual(u, prob)
    report.wall_time = time.perf_counter() - t0
    if not report.converged:
        raise NonConvergenceError(
            f"fixed point did not converge in {report.iterations} iterations "
            f"(last increment {report.increments_w1p[-1] if report.increments_w1p else float('nan'):.3e})",
            report,
        )
    return u, report


# ---------------------------------------------------------------------------
# residuals


def strong_residual(u: VectorField, prob: SlipProblem) -> float:
    """Interior L^2 norm of ``-div(Du) - (p-2) G(u) - (mu + |Du|^2)^((2-p)/2) f``."""
    dom = prob.dom
    if not u.tangent:
        u = apply_slip_bc(u, prob.variant, dom)
    D, gD = nodal_quantities(u, dom)
    Dt = sym_grad(u, dom)
    lhs = -div_tensor(Dt, dom).values
    G = g_vector(D, gD, prob.params)
    r = lhs - (prob.p - 2) * G - b_inverse(D, prob.params) * prob.f.values
    inner = (slice(None), slice(1, -1), slice(1, -1))
    w = dom.weights[1:-1, 1:-1]
    return float(np.sqrt(np.sum(w * np.sum(r[inner] ** 2, axis=0))))


def test_fields(dom: Domain, n_test: int, seed: int = 12345, variant=BcVariant.NAVIER) -> list[VectorField]:
    """Random smooth tangent test functions (deterministic)."""
    rng = np.random.default_rng(seed)
    return [apply_slip_bc(smooth_random_field(dom, rng, modes=3), variant, dom) for _ in range(n_test)]


def weak_functional(u: VectorField, v: VectorField, f: VectorField, params: StressParams, dom: Domain) -> float:
    """``1/2 sum_w B(Du) Du : Dv - sum_w f.v``."""
    Du = sym_grad(u, dom).values
    Dv = sym_grad(v, dom).values
    flux = b_times_D(Du, params)
    a = 0.5 * np.sum(dom.weights * np.sum(flux * Dv, axis=(0, 1)))
    return float(a - np.sum(dom.weights * np.sum(f.values * v.values, axis=0)))


def weak_residual(u: VectorField, prob: SlipProblem, n_test: int = 20, seed: int = 12345,
                  relative: bool = False) -> float:
    """``max_v |1/2 sum_w B Du:Dv - sum_w f.v| / ||v||_{W^{1,p}}`` over random tangent ``v``.

    With ``relative`` the value is divided by the same maximum of
    ``|sum_w f.v| / ||v||``.
    """
    dom = prob.dom
    if not u.tangent:
        u = apply_slip_bc(u, prob.variant, dom)
    worst, fscale = 0.0, 0.0
    for v in test_fields(dom, n_test, seed, prob.variant):
        nv = w1p_norm(v, dom, prob.p)
        worst = max(worst, abs(weak_functional(u, v, prob.f, prob.params, dom)) / nv)
        fscale = max(fscale, abs(float(np.sum(dom.weights * np.sum(prob.f.values * v.values, axis=0)))) / nv)
    if relative:
        return worst / fscale if fscale > 0 else worst
    return worst
