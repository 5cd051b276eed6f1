"""Closed-form scalar quantities: integrability exponents, the contraction gate and the ball radius."""
from __future__ import annotations

from dataclasses import dataclass

MU_EXPONENT_NOTE = (
    "ball radius uses mu^((2-p)/2), the exponent produced by "
    "(mu + |Dv|^2)^((2-p)/2) <= mu^((2-p)/2) + |Dv|^(2-p)"
)


class GateViolation(ValueError):
    """``alpha = 1 - (2-p) Cq <= 0``: the invariant ball cannot be built."""


@dataclass(frozen=True)
class ExponentParams:
    p: float
    q: float
    n: int = 2
    mu: float = 0.0

    def __post_init__(self):
        if not 1 < self.p <= 2:
            raise ValueError(f"p must lie in (1, 2], got {self.p}")
        if self.q <= 1:
            raise ValueError(f"q must exceed 1, got {self.q}")
        if self.n < 2:
            raise ValueError(f"n must be at least 2, got {self.n}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")


@dataclass(frozen=True)
class RadiusInputs:
    Cq: float
    Chat: float
    fnorm_q: float
    alpha: float


def critical_r(q: float, n: float, p: float) -> float:
    """``r(q) = n q / (n(p-1) + q(2-p))``, the data exponent giving ``W^{2,q}``."""
    if q <= 0:
        raise ValueError(f"q must be positive, got {q}")
    den = n * (p - 1) + q * (2 - p)
    if den <= 0:
        raise ValueError(f"r(q) undefined: n(p-1) + q(2-p) = {den} <= 0")
    return n * q / den


def q_hat(n: float, p: float) -> float:
    """``2n(p-1) / (n - 2(2-p))``, the exponent with ``r(q_hat) = 2``."""
    den = n - 2 * (2 - p)
    if den <= 0:
        raise ValueError(f"q_hat undefined: n - 2(2-p) = {den} <= 0")
    return 2 * n * (p - 1) / den


def contraction_gate(p: float, Cq: float) -> tuple[float, bool]:
    """``alpha = 1 - (2-p) Cq`` and whether it is positive."""
    if Cq <= 0:
        raise ValueError(f"Cq must be positive, got {Cq}")
    alpha = 1.0 - (2.0 - p) * Cq
    return alpha, alpha > 0


def ball_radius(inputs: RadiusInputs, params: ExponentParams) -> float:
    """Radius ``R`` with ``T(K(R))`` contained in ``K(R)``.

    ``R = (2/alpha) mu^((2-p)/2) Cq |f| + (2 Cq Chat^(2-p) / alpha)^(1/(p-1)) |f|^(1/(p-1))``;
    each right-hand term of the invariance inequality is then at most half of
    ``alpha R``.
    """
    p, mu = params.p, params.mu
    if inputs.alpha <= 0:
        raise GateViolation(f"alpha = {inputs.alpha} <= 0")
    f = inputs.fnorm_q
    first = 2.0 / inputs.alpha * mu ** ((2 - p) / 2) * inputs.Cq * f
    second = (2.0 * inputs.Cq * inputs.Chat ** (2 - p) / inputs.alpha) ** (1 / (p - 1)) * f ** (1 / (p - 1))
    return first + second


def invariance_margin(R: float, inputs: RadiusInputs, params: ExponentParams) -> float:
    """``alpha R - [mu^((2-p)/2) Cq |f| + Cq Chat^(2-p) |f| R^(2-p)]``; nonnegative when ``T(K) in K``."""
    p = params.p
    rhs = params.mu ** ((2 - p) / 2) * inputs.Cq * inputs.fnorm_q
    rhs += inputs.Cq * inputs.Chat ** (2 - p) * inputs.fnorm_q * R ** (2 - p)
    return inputs.alpha * R - rhs
