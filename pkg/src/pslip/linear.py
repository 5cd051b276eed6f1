"""Auxiliary linear problem ``-div(D u) = F`` under slip conditions.

The assembled matrix is the weak form ``A = 1/2 M^T W_D M`` on the free
unknowns, which is symmetric positive definite; the strong-form action is
``A u / w``. Constants of the linear estimate, the embedding ``Dv -> L^inf``
and Korn's inequality are estimated by sampling.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as sla

from .grid import (
    BcVariant,
    Domain,
    SlipOperators,
    VectorField,
    grad_vector,
    lq_norm,
    slip_operators,
    smooth_random_field,
    sym_grad,
    w2q_surrogate,
)

log = logging.getLogger(__name__)

DIRECT_MAX_NODES = 66 * 66


class LinearSolverError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class LinearOperator:
    dom: Domain
    variant: BcVariant
    ops: SlipOperators
    _lu: object = field(default=None, repr=False)

    @property
    def A(self):
        return self.ops.A

    @property
    def diag(self) -> np.ndarray:
        return self.ops.A.diagonal()

    def factorized(self):
        if self._lu is None:
            self._lu = sla.splu(self.A.tocsc())
        return self._lu

    def apply(self, u: VectorField) -> VectorField:
        """Strong-form action ``-div(D u)``; zero at the constrained entries."""
        x = self.ops.to_free(u)
        return self.ops.to_field(self.A @ x / self.ops.wfree)

    def load(self, F: VectorField) -> np.ndarray:
        """Weighted right-hand side ``w * F`` on the free unknowns."""
        return self.ops.wfree * self.ops.to_free(F)


def assemble(dom: Domain, variant: BcVariant | str = BcVariant.NAVIER) -> LinearOperator:
    variant = BcVariant.parse(variant)
    return LinearOperator(dom, variant, slip_operators(dom, variant))


def pcg(A, b, tol=1e-12, maxiter=None, M_diag=None, x0=None):
    """Jacobi-preconditioned conjugate gradients; returns ``(x, residual_history)``."""
    n = b.size
    maxiter = maxiter or 10 * n
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), [0.0]
    inv = 1.0 / M_diag if M_diag is not None else np.ones(n)
    z = inv * r
    d = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if history[-1] <= tol:
            return x, history
        Ad = A @ d
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        history.append(np.linalg.norm(r) / bnorm)
        z = inv * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    if history[-1] <= tol:
        return x, history
    raise LinearSolverError(
        f"CG stagnated at relative residual {history[-1]:.3e} after {maxiter} iterations", history
    )


def solve_free(opA: LinearOperator, b: np.ndarray, tol: float = 1e-12, method: str = "auto") -> np.ndarray:
    if method == "auto":
        method = "direct" if opA.ops.nnodes <= DIRECT_MAX_NODES else "cg"
    if method == "direct":
        return opA.factorized().solve(b)
    if method == "cg":
        x, _ = pcg(opA.A, b, tol=tol, M_diag=opA.diag)
        return x
    raise ValueError(f"unknown linear solver method {method!r}")


def solve_linear(opA: LinearOperator, F: VectorField, tol: float = 1e-12, method: str = "auto") -> VectorField:
    """Solve ``-div(D u) = F`` with the slip condition of ``opA``.

    ``method`` is ``"cg"``, ``"direct"`` (sparse LU, cached) or ``"auto"``,
    which factorizes on grids up to 64x64 interior nodes.
    """
    x = solve_free(opA, opA.load(F), tol=tol, method=method)
    return opA.ops.to_field(x)


# ---------------------------------------------------------------------------
# constants


@dataclass
class ConstantsEstimate:
    """Sampled lower bounds for the constants of the linear theory."""

    Cq_disc: float
    Chat_disc: float
    korn_disc: float
    q: float
    samples: int
    method: str = "random smooth sampling + coordinate ascent (lower bounds)"

    def to_dict(self) -> dict:
        return asdict(self)


def _load_basis(dom: Domain, modes: int):
    """Cosine/sine products with arbitrary phase, one block per component."""
    X, Y = dom.mesh
    a, b = np.pi / dom.Lx, np.pi / dom.Ly
    basis, decay = [], []
    for k in range(modes + 1):
        for l in range(modes + 1):
            for fx in (np.cos, np.sin):
                for fy in (np.cos, np.sin):
                    phi = fx(k * a * X) * fy(l * b * Y)
                    if not np.any(np.abs(phi) > 1e-12):
                        continue
                    for comp in range(2):
                        arr = np.zeros((2,) + dom.shape)
                        arr[comp] = phi
                        basis.append(arr)
                        decay.append((1.0 + k * k + l * l) ** -0.5)
    return np.array(basis), np.array(decay)


def _cq_ratio(opA: LinearOperator, F_values: np.ndarray, q: float) -> float:
    F = VectorField(F_values)
    nF = lq_norm(F, q, opA.dom)
    if nF == 0:
        return 0.0
    u = solve_linear(opA, F)
    return w2q_surrogate(u, opA.dom, q) / nF


def estimate_Cq(opA: LinearOperator, q: float, n_samples: int = 200, seed: int = 0,
                ascent: bool = True, modes: int = 3, ascent_sweeps: int = 2) -> ConstantsEstimate:
    """Lower bound for ``sup ||grad D u||_q / ||F||_q`` over smooth loads ``F``."""
    if n_samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    basis, decay = _load_basis(opA.dom, modes)
    best, best_c = -np.inf, None
    for _ in range(n_samples):
        c = rng.standard_normal(decay.size) * decay
        r = _cq_ratio(opA, np.tensordot(c, basis, axes=1), q)
        if r > best:
            best, best_c = r, c
    samples = n_samples
    if ascent:
        step = 0.5 * np.abs(best_c).max()
        for _ in range(ascent_sweeps):
            for i in rng.permutation(decay.size):
                for sgn in (1.0, -1.0):
                    trial = best_c.copy()
                    trial[i] += sgn * step
                    r = _cq_ratio(opA, np.tensordot(trial, basis, axes=1), q)
                    samples += 1
                    if r > best:
                        best, best_c = r, trial
                        break
            step *= 0.5
    return ConstantsEstimate(Cq_disc=float(best), Chat_disc=float("nan"), korn_disc=float("nan"),
                             q=q, samples=samples)


def estimate_Chat(dom: Domain, q: float, n_samples: int = 100, seed: int = 0, modes: int = 3) -> float:
    """Lower bound for ``sup ||Dv||_inf / ||grad D v||_q`` over tangent fields; needs ``q > 2``."""
    if q <= 2:
        raise ValueError(f"the embedding into L^inf needs q > n = 2, got q = {q}")
    from .grid import grad_tensor

    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        v = smooth_random_field(dom, rng, modes=modes)
        D = sym_grad(v, dom)
        den = lq_norm(grad_tensor(D, dom), q, dom)
        if den > 0:
            best = max(best, lq_norm(D, np.inf, dom) / den)
    return best


def estimate_korn(dom: Domain, p: float, n_samples: int = 100, seed: int = 0, modes: int = 3) -> float:
    """Lower bound for ``sup ||grad v||_p / ||Dv||_p`` over tangent fields."""
    if not 1 < p <= 2:
        raise ValueError(f"p must lie in (1, 2], got {p}")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        v = smooth_random_field(dom, rng, modes=modes)
        den = lq_norm(sym_grad(v, dom), p, dom)
        if den > 0:
            best = max(best, lq_norm(grad_vector(v, dom), p, dom) / den)
    return best


def estimate_constants(dom: Domain, q: float, p: float, variant=BcVariant.NAVIER,
                       n_samples: int = 200, seed: int = 0) -> ConstantsEstimate:
    opA = assemble(dom, variant)
    est = estimate_Cq(opA, q, n_samples=n_samples, seed=seed)
    est.Chat_disc = estimate_Chat(dom, q, n_samples=max(1, n_samples // 2), seed=seed) if q > 2 else float("nan")
    est.korn_disc = estimate_korn(dom, p, n_samples=max(1, n_samples // 2), seed=seed)
    return est


def dump_matrix(opA: LinearOperator, path: str | Path) -> None:
    """Coordinate-format text dump ``row col value``."""
    coo = opA.A.tocoo()
    np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]), fmt=["%d", "%d", "%.17g"])
