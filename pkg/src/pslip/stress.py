"""Pointwise nonlinear quantities: the diffusivity B, I(u), G(v) and the fixed-point load F(v).

Tensors are arrays of shape ``(2, 2, ...)``; trailing axes are nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Domain, TensorField, VectorField, grad_tensor, sym_grad


class SingularPointError(ValueError):
    """B evaluated at ``D = 0`` with ``mu = 0`` and ``p < 2``."""


@dataclass(frozen=True)
class StressParams:
    p: float
    mu: float = 0.0

    def __post_init__(self):
        if not 1.0 < self.p <= 2.0:
            raise ValueError(f"p must lie in (1, 2], got {self.p}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")


def _values(T):
    return T.values if isinstance(T, TensorField) else np.asarray(T, dtype=float)


def frob2(D) -> np.ndarray:
    """``|D|^2 = sum_ij D_ij^2``."""
    D = _values(D)
    return np.sum(D * D, axis=(0, 1))


def b_coeff(D, params: StressParams) -> np.ndarray:
    """``B = (mu + |D|^2)^((p-2)/2)``."""
    s = params.mu + frob2(D)
    if params.p < 2 and np.any(s == 0):
        raise SingularPointError("B is unbounded at D = 0 when mu = 0; use b_times_D")
    return s ** ((params.p - 2) / 2)


def b_times_D(D, params: StressParams) -> np.ndarray:
    """``B(D) D`` with the continuous extension ``0`` at ``D = 0, mu = 0``."""
    D = _values(D)
    s = params.mu + frob2(D)
    if params.p == 2:
        return D.copy()
    with np.errstate(divide="ignore"):
        b = np.where(s > 0, s, 1.0) ** ((params.p - 2) / 2)
    return np.where(s > 0, b, 0.0) * D


def b_inverse(D, params: StressParams) -> np.ndarray:
    """``(mu + |D|^2)^((2-p)/2)``; bounded, zero at the singular set."""
    return (params.mu + frob2(D)) ** ((2 - params.p) / 2)


def i_vector(D, gradD) -> np.ndarray:
    """``I_j = sum_{k,l,m} D_lm (d_k D_lm) D_kj``.

    ``gradD[k, l, m] = d_k D_lm``.
    """
    D = _values(D)
    return np.einsum("lm...,klm...,kj...->j...", D, gradD, D)


def g_vector(D, gradD, params: StressParams) -> np.ndarray:
    """``G = (mu + |D|^2)^-1 I``, set to zero where ``mu + |D|^2 = 0``."""
    D = _values(D)
    s = params.mu + frob2(D)
    I = i_vector(D, gradD)
    return np.where(s > 0, I / np.where(s > 0, s, 1.0), 0.0)


def nodal_quantities(v: VectorField, dom: Domain):
    """``(D v, grad D v)`` as arrays."""
    D = sym_grad(v, dom)
    return D.values, grad_tensor(D, dom)


def rhs_F(v: VectorField, f: VectorField, params: StressParams, dom: Domain) -> VectorField:
    """``F(v) = (p-2) G(v) + (mu + |Dv|^2)^((2-p)/2) f`` evaluated pointwise."""
    if params.p == 2:
        return VectorField(f.values.copy())
    D, gD = nodal_quantities(v, dom)
    G = g_vector(D, gD, params)
    return VectorField((params.p - 2) * G + b_inverse(D, params) * f.values)


def expansion_residual(u: VectorField, params: StressParams, dom: Domain) -> np.ndarray:
    """``div(B Du) - [B div(Du) + (p-2)(mu+|Du|^2)^((p-4)/2) I(u)]`` at every node."""
    from .grid import div_tensor

    Dt = sym_grad(u, dom)
    D = Dt.values
    gD = grad_tensor(Dt, dom)
    BD = TensorField(b_times_D(D, params), symmetric=True, bc=Dt.bc)
    lhs = div_tensor(BD, dom).values
    s = params.mu + frob2(D)
    rhs = b_coeff(D, params) * div_tensor(Dt, dom).values
    rhs = rhs + (params.p - 2) * s ** ((params.p - 4) / 2) * i_vector(D, gD)
    return lhs - rhs


# ---------------------------------------------------------------------------
# scalar inequality helpers


def check_subadditivity(a, b, alpha) -> np.ndarray:
    """``(a+b)^alpha <= a^alpha + b^alpha`` for ``a, b >= 0`` and ``0 < alpha < 1``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lhs = (a + b) ** alpha
    rhs = a**alpha + b**alpha
    # rounding slack relative to the larger side
    return lhs <= rhs * (1 + 4 * np.finfo(float).eps)


def check_difference_bound(A, B, mu, p) -> np.ndarray:
    """``|B(A)A - B(B)B| (mu + |A| + |B|)^(2-p) / |A - B|``.

    Its supremum over samples is the constant in
    ``|B(A)A - B(B)B| <= C |A - B| / (mu + |A| + |B|)^(2-p)``; the ratio is
    defined as 0 where ``A == B``. Matrices are ``(2, 2, ...)`` arrays.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    params = StressParams(p, mu)
    nA = np.sqrt(frob2(A))
    nB = np.sqrt(frob2(B))
    num = np.sqrt(frob2(b_times_D(A, params) - b_times_D(B, params))) * (mu + nA + nB) ** (2 - p)
    den = np.sqrt(frob2(A - B))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def monotonicity_gap(A, B, params: StressParams) -> np.ndarray:
    """``(B(A)A - B(B)B) : (A - B)``; nonnegative for a monotone flux."""
    return np.sum((b_times_D(A, params) - b_times_D(B, params)) * (np.asarray(A) - np.asarray(B)), axis=(0, 1))
