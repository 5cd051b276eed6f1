"""Convex energy whose stationarity condition is the weak formulation, and its minimizer.

``J(u) = 1/(2p) sum_w (mu + |Du|^2)^(p/2) - sum_w f.u``. Along a tangent
direction ``v`` its derivative is ``1/2 sum_w B(Du) Du : Dv - sum_w f.v``, so
the minimizer over tangent fields is the discrete weak solution. The search
space is the vector of free unknowns, which builds ``u.n = 0`` in.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import line_search

from .grid import BcVariant, Domain, VectorField
from .linear import LinearOperator, assemble, solve_free
from .stress import StressParams

log = logging.getLogger(__name__)


class MinimizationError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class EnergyFunctional:
    dom: Domain
    params: StressParams
    f: VectorField
    variant: BcVariant = BcVariant.NAVIER
    opA: LinearOperator | None = None

    def __post_init__(self):
        self.variant = BcVariant.parse(self.variant)
        if self.opA is None:
            self.opA = assemble(self.dom, self.variant)
        self.ops = self.opA.ops
        self.load = self.ops.wfree * self.ops.to_free(self.f)

    # free-vector interface -------------------------------------------------

    def value_x(self, x: np.ndarray) -> float:
        d = self.ops.sym(x)
        s = self.params.mu + d[0] ** 2 + 2 * d[1] ** 2 + d[2] ** 2
        p = self.params.p
        return float(np.sum(self.ops.node_weights * s ** (p / 2)) / (2 * p) - self.load @ x)

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        d = self.ops.sym(x)
        p, mu = self.params.p, self.params.mu
        s = mu + d[0] ** 2 + 2 * d[1] ** 2 + d[2] ** 2
        if p == 2:
            t = d
        else:
            with np.errstate(divide="ignore"):
                b = np.where(s > 0, np.where(s > 0, s, 1.0) ** ((p - 2) / 2), 0.0)
            t = b * d
        return self.ops.weak(t) - self.load

    def value_and_grad(self, x):
        return self.value_x(x), self.grad_x(x)


def energy(u: VectorField, functional: EnergyFunctional) -> float:
    return functional.value_x(functional.ops.to_free(u))


def energy_grad(u: VectorField, functional: EnergyFunctional) -> VectorField:
    """Representer of the derivative on the free unknowns (zero at constrained entries).

    ``sum(energy_grad * v)`` over free entries equals the directional
    derivative along ``v``.
    """
    return functional.ops.to_field(functional.grad_x(functional.ops.to_free(u)))


@dataclass
class MinimizeTrace:
    iterations: int = 0
    grad_norms: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    fallbacks: int = 0
    converged: bool = False


def _derivative_search(functional, x, d, slope0, max_eval=40):
    """Zero of ``t -> grad J(x + t d) . d`` by bracketing and bisection (``slope0 < 0``)."""
    if slope0 >= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_eval):
        if functional.grad_x(x + hi * d) @ d > 0:
            break
        lo, hi = hi, 2 * hi
    else:
        return hi
    for _ in range(max_eval):
        mid = 0.5 * (lo + hi)
        if functional.grad_x(x + mid * d) @ d > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-3 * hi:
            break
    return lo if lo > 0 else 0.5 * hi


def minimize(functional: EnergyFunctional, tol_g: float = 1e-10, max_iter: int = 5000, memory: int = 10,
             x0: VectorField | None = None, return_trace: bool = False):
    """Limited-memory BFGS preconditioned by the linear slip operator.

    The initial inverse Hessian of the two-loop recursion is ``gamma A^-1``.
    Stops when ``||grad||_2 <= tol_g * ||w f||_2``. A failed Wolfe line search
    falls back to a preconditioned gradient step whose length zeroes the
    directional derivative.
    """
    opA = functional.opA
    ops = functional.ops
    x = np.zeros(ops.nfree) if x0 is None else ops.to_free(x0)
    scale = np.linalg.norm(functional.load)
    trace = MinimizeTrace()

    def precond(g):
        return solve_free(opA, g)

    J, g = functional.value_and_grad(x)
    trace.energies.append(J)
    trace.grad_norms.append(float(np.linalg.norm(g)))
    if scale == 0:
        scale = 1.0
    S, Y, RHO = [], [], []
    gamma = 1.0
    for it in range(max_iter):
        if trace.grad_norms[-1] <= tol_g * scale:
            trace.converged = True
            break
        # two-loop recursion
        qv = g.copy()
        alphas = []
        for s_, y_, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * (s_ @ qv)
            alphas.append(a)
            qv -= a * y_
        r = gamma * precond(qv)
        for (s_, y_, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * (y_ @ r)
            r += (a - b) * s_
        direction = -r
        if direction @ g >= 0:
            direction = -precond(g)
            S.clear(), Y.clear(), RHO.clear()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            step, *_rest = line_search(functional.value_x, functional.grad_x, x, direction, gfk=g,
                                       old_fval=J, c2=0.9, maxiter=30)
        if step is None:
            # energy differences are below roundoff near the minimum; the
            # directional derivative is still accurate and, by convexity, monotone
            trace.fallbacks += 1
            direction = -precond(g)
            step = _derivative_search(functional, x, direction, g @ direction)
            S.clear(), Y.clear(), RHO.clear()
            if step == 0.0:
                trace.iterations = it
                raise MinimizationError("line search failed and gradient fallback made no progress", trace)
        x_new = x + step * direction
        J_new, g_new = functional.value_and_grad(x_new)
        s_vec, y_vec = x_new - x, g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-300:
            S.append(s_vec)
            Y.append(y_vec)
            RHO.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), RHO.pop(0)
            Hy = precond(y_vec)
            gamma = sy / (y_vec @ Hy)
        x, J, g = x_new, J_new, g_new
        trace.energies.append(J)
        trace.grad_norms.append(float(np.linalg.norm(g)))
        trace.iterations = it + 1
    else:
        if trace.grad_norms[-1] > tol_g * scale:
            raise MinimizationError(f"no convergence in {max_iter} iterations "
                                    f"(|g| = {trace.grad_norms[-1]:.3e})", trace)
        trace.converged = True
    u = ops.to_field(x)
    return (u, trace) if return_trace else u
