"""Structured rectangular grid, discrete fields and finite-difference operators.

Nodes are vertex centered, ``x_i = i*hx`` for ``i = 0..Nx+1`` and likewise in
``y``, so arrays carry the boundary nodes and have shape ``(Nx+2, Ny+2)``
indexed ``[i, j]``.

Two differencing modes exist:

* generic: centered in the interior, second-order one-sided at the boundary
  (``numpy.gradient(edge_order=2)``); used for arbitrary fields;
* slip: fields on which the slip condition has been enforced carry their
  ``bc`` tag and are differenced with centered stencils everywhere, the ghost
  layer being filled by reflection. On a flat face with ``u.n = 0`` both the
  tangential-stress and the tangential-vorticity conditions reduce to an even
  reflection of the tangential component and an odd reflection of the normal
  one, which makes every operator an exact restriction of a periodic stencil.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class BcVariant(enum.Enum):
    NAVIER = "navier"    # u.n = 0, (t(u))_tau = 0
    BARDOS = "bardos"    # u.n = 0, omega(u) x n = 0

    @classmethod
    def parse(cls, value) -> "BcVariant":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class Domain:
    """Rectangle ``[0, Lx] x [0, Ly]`` with ``Nx x Ny`` interior nodes."""

    Lx: float = 1.0
    Ly: float = 0.7
    Nx: int = 32
    Ny: int = 32
    allow_square: bool = False

    def __post_init__(self):
        if self.Nx < 3 or self.Ny < 3:
            raise ValueError(f"need at least 3 interior nodes per axis, got {self.Nx}x{self.Ny}")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("side lengths must be positive")
        if self.Lx == self.Ly and not self.allow_square:
            raise ValueError("Lx == Ly; pass allow_square=True to use a square")

    @classmethod
    def unit_square(cls, N: int) -> "Domain":
        return cls(1.0, 1.0, N, N, allow_square=True)

    def refined(self, N: int) -> "Domain":
        """Same rectangle with ``N`` interior nodes along each axis."""
        return Domain(self.Lx, self.Ly, N, N, self.allow_square)

    @property
    def hx(self) -> float:
        return self.Lx / (self.Nx + 1)

    @property
    def hy(self) -> float:
        return self.Ly / (self.Ny + 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx + 2, self.Ny + 2)

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.Lx, self.Nx + 2)

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(0.0, self.Ly, self.Ny + 2)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights on the closed node set."""
        wx = np.full(self.Nx + 2, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.Ny + 2, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    @cached_property
    def interior(self) -> tuple[slice, slice]:
        return (slice(1, -1), slice(1, -1))


# ---------------------------------------------------------------------------
# fields


@dataclass
class VectorField:
    """Two-component field on the closed node set, ``values.shape == (2, Nx+2, Ny+2)``."""

    values: np.ndarray
    bc: BcVariant | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise ValueError(f"bad vector field shape {self.values.shape}")

    @property
    def tangent(self) -> bool:
        return self.bc is not None

    @classmethod
    def zeros(cls, dom: Domain, bc: BcVariant | None = None) -> "VectorField":
        return cls(np.zeros((2,) + dom.shape), bc)

    @classmethod
    def from_function(cls, fn, dom: Domain) -> "VectorField":
        X, Y = dom.mesh
        u1, u2 = fn(X, Y)
        return cls(np.stack([np.broadcast_to(u1, dom.shape), np.broadcast_to(u2, dom.shape)]))

    def copy(self) -> "VectorField":
        return VectorField(self.values.copy(), self.bc)

    def _combine(self, other, values):
        bc = self.bc if isinstance(other, VectorField) and other.bc == self.bc else None
        return VectorField(values, bc)

    def __add__(self, other: "VectorField") -> "VectorField":
        return self._combine(other, self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self._combine(other, self.values - other.values)

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(self.values * scalar, self.bc)

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(-self.values, self.bc)


@dataclass
class TensorField:
    """2x2 tensor per node, ``values.shape == (2, 2, Nx+2, Ny+2)``."""

    values: np.ndarray
    symmetric: bool = False
    bc: BcVariant | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.symmetric and not np.array_equal(self.values[0, 1], self.values[1, 0]):
            raise ValueError("symmetric flag set but T12 != T21")

    def __mul__(self, scalar):
        return TensorField(self.values * scalar, self.symmetric, self.bc)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# reflection parities
#
# Sign picked up under reflection across an x-face (x -> -x) and a y-face.
# u1 is the normal component on x-faces, u2 on y-faces.

VECTOR_PARITY = ((-1, 1), (1, -1))
TENSOR_PARITY = (((1, 1), (-1, -1)), ((-1, -1), (1, 1)))


def _pad_axis(a: np.ndarray, axis: int, sign: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    out = np.concatenate([sign * a[..., 1:2], a, sign * a[..., -2:-1]], axis=-1)
    return np.moveaxis(out, -1, axis)


def pad_reflect(a: np.ndarray, sx: int, sy: int) -> np.ndarray:
    """Add one ghost layer to a nodal array by signed reflection about each face."""
    return _pad_axis(_pad_axis(a, -2, sx), -1, sy)


def _centered(padded: np.ndarray, axis: int, h: float) -> np.ndarray:
    if axis == 0:
        return (padded[..., 2:, 1:-1] - padded[..., :-2, 1:-1]) / (2 * h)
    return (padded[..., 1:-1, 2:] - padded[..., 1:-1, :-2]) / (2 * h)


def reflect_diff(a: np.ndarray, axis: int, dom: Domain, sx: int, sy: int) -> np.ndarray:
    """Centered derivative of a nodal array with parity ``(sx, sy)``."""
    return _centered(pad_reflect(a, sx, sy), axis, dom.hx if axis == 0 else dom.hy)


def generic_diff(a: np.ndarray, axis: int, dom: Domain) -> np.ndarray:
    h = dom.hx if axis == 0 else dom.hy
    return np.gradient(a, h, axis=a.ndim - 2 + axis, edge_order=2)


# ---------------------------------------------------------------------------
# slip boundary condition


def ghost_layer(u: VectorField, variant: BcVariant, dom: Domain) -> np.ndarray:
    """Padded copy of ``u`` with ghost values from the discrete slip condition.

    The normal component is reflected oddly (``u.n = 0`` on the face). The
    tangential ghost solves the centered boundary equation of the chosen
    variant: ``D_{n tau} = d_n u_tau + d_tau u_n = 0`` for Navier,
    ``omega = +-(d_n u_tau - d_tau u_n) = 0`` for Bardos. With ``u.n = 0`` along
    the face ``d_tau u_n`` vanishes and both give an even reflection.
    """
    variant = BcVariant.parse(variant)
    hx, hy = dom.hx, dom.hy
    u1, u2 = u.values
    sgn = 1.0 if variant is BcVariant.NAVIER else -1.0

    # tangential derivative of the normal component along each face
    du2_dx_bottom = np.gradient(u2[:, 0], hx, edge_order=2)
    du2_dx_top = np.gradient(u2[:, -1], hx, edge_order=2)
    du1_dy_left = np.gradient(u1[0, :], hy, edge_order=2)
    du1_dy_right = np.gradient(u1[-1, :], hy, edge_order=2)

    p1 = np.zeros((u1.shape[0] + 2, u1.shape[1] + 2))
    p2 = np.zeros_like(p1)
    p1[1:-1, 1:-1] = u1
    p2[1:-1, 1:-1] = u2

    # x-faces: u1 normal, u2 tangential
    p1[0, 1:-1] = -u1[1, :]
    p1[-1, 1:-1] = -u1[-2, :]
    p2[0, 1:-1] = u2[1, :] + sgn * 2 * hx * du1_dy_left
    p2[-1, 1:-1] = u2[-2, :] - sgn * 2 * hx * du1_dy_right
    # y-faces: u2 normal, u1 tangential
    p2[1:-1, 0] = -u2[:, 1]
    p2[1:-1, -1] = -u2[:, -2]
    p1[1:-1, 0] = u1[:, 1] + sgn * 2 * hy * du2_dx_bottom
    p1[1:-1, -1] = u1[:, -2] - sgn * 2 * hy * du2_dx_top
    # ghost corners are never read by 5-point centered stencils
    return np.stack([p1, p2])


def apply_slip_bc(u: VectorField, variant: BcVariant | str, dom: Domain) -> VectorField:
    """Zero the normal component on every face and tag the field with ``variant``."""
    variant = BcVariant.parse(variant)
    v = u.values.copy()
    v[0, 0, :] = 0.0
    v[0, -1, :] = 0.0
    v[1, :, 0] = 0.0
    v[1, :, -1] = 0.0
    return VectorField(v, variant)


def _slip_padded(u: VectorField, dom: Domain) -> np.ndarray:
    return ghost_layer(u, u.bc, dom)


# ---------------------------------------------------------------------------
# differential operators


def grad_vector(u: VectorField, dom: Domain) -> np.ndarray:
    """``G[k, j] = d_k u_j`` with shape ``(2, 2, Nx+2, Ny+2)``."""
    out = np.empty((2, 2) + dom.shape)
    if u.tangent:
        padded = _slip_padded(u, dom)
        for k in range(2):
            out[k] = _centered(padded, k, dom.hx if k == 0 else dom.hy)
    else:
        for k in range(2):
            out[k] = generic_diff(u.values, k, dom)
    return out


def sym_grad(u: VectorField, dom: Domain) -> TensorField:
    """``D_ij = d_i u_j + d_j u_i`` (no factor one half)."""
    g = grad_vector(u, dom)
    D = g + g.transpose(1, 0, 2, 3)
    D[1, 0] = D[0, 1]
    return TensorField(D, symmetric=True, bc=u.bc)


def grad_tensor(T: TensorField, dom: Domain) -> np.ndarray:
    """``out[k, l, m] = d_k T_lm`` with shape ``(2, 2, 2, Nx+2, Ny+2)``."""
    out = np.empty((2, 2, 2) + dom.shape)
    for l in range(2):
        for m in range(2):
            for k in range(2):
                if T.bc is not None:
                    sx, sy = TENSOR_PARITY[l][m]
                    out[k, l, m] = reflect_diff(T.values[l, m], k, dom, sx, sy)
                else:
                    out[k, l, m] = generic_diff(T.values[l, m], k, dom)
    return out


def div_tensor(T: TensorField, dom: Domain) -> VectorField:
    """``(div T)_j = sum_i d_i T_ij``."""
    out = np.zeros((2,) + dom.shape)
    for j in range(2):
        for i in range(2):
            if T.bc is not None:
                sx, sy = TENSOR_PARITY[i][j]
                out[j] += reflect_diff(T.values[i, j], i, dom, sx, sy)
            else:
                out[j] += generic_diff(T.values[i, j], i, dom)
    return VectorField(out)


def curl2(u: VectorField, dom: Domain) -> np.ndarray:
    """Scalar vorticity ``d_1 u_2 - d_2 u_1``."""
    g = grad_vector(u, dom)
    return g[0, 1] - g[1, 0]


def divergence(u: VectorField, dom: Domain) -> np.ndarray:
    g = grad_vector(u, dom)
    return g[0, 0] + g[1, 1]


def scalar_grad(phi: np.ndarray, dom: Domain, parity: tuple[int, int] | None = None) -> np.ndarray:
    if parity is None:
        return np.stack([generic_diff(phi, 0, dom), generic_diff(phi, 1, dom)])
    return np.stack([reflect_diff(phi, k, dom, *parity) for k in range(2)])


def laplacian(u: VectorField, dom: Domain) -> np.ndarray:
    """Componentwise Laplacian as the divergence of the discrete gradient."""
    g = grad_vector(u, dom)
    out = np.zeros((2,) + dom.shape)
    for j in range(2):
        for k in range(2):
            if u.tangent:
                sx, sy = VECTOR_PARITY[j]
                sx, sy = (-sx, sy) if k == 0 else (sx, -sy)
                out[j] += reflect_diff(g[k, j], k, dom, sx, sy)
            else:
                out[j] += generic_diff(g[k, j], k, dom)
    return out


# ---------------------------------------------------------------------------
# norms


def _magnitude(values: np.ndarray, dom: Domain) -> np.ndarray:
    lead = values.ndim - 2
    if lead == 0:
        return np.abs(values)
    s = float(np.abs(values).max()) if values.size else 0.0
    if s == 0.0 or not np.isfinite(s):
        return np.sqrt(np.sum(values**2, axis=tuple(range(lead))))
    return s * np.sqrt(np.sum((values / s) ** 2, axis=tuple(range(lead))))


def lq_norm(field_, q: float, dom: Domain) -> float:
    """Trapezoid-weighted discrete L^q norm of the pointwise Euclidean magnitude."""
    if q < 1:
        raise ValueError(f"L^q norm needs q >= 1, got {q}")
    values = getattr(field_, "values", field_)
    mag = _magnitude(np.asarray(values, dtype=float), dom)
    m = float(mag.max()) if mag.size else 0.0
    if np.isinf(q) or m == 0.0:
        return m
    # scaled by the maximum to avoid under/overflow of mag**q
    return float(m * np.sum(dom.weights * (mag / m) ** q) ** (1.0 / q))


def w2q_surrogate(u: VectorField, dom: Domain, q: float) -> float:
    """``||grad D u||_q``, the second-order norm surrogate."""
    return lq_norm(grad_tensor(sym_grad(u, dom), dom), q, dom)


def hessian_norm(u: VectorField, dom: Domain, q: float) -> float:
    """``||grad^2 u||_q`` computed from the discrete gradient of the gradient."""
    g = grad_vector(u, dom)
    out = np.empty((2, 2, 2) + dom.shape)
    for k in range(2):
        for j in range(2):
            for l in range(2):
                if u.tangent:
                    sx, sy = VECTOR_PARITY[j]
                    sx, sy = (-sx, sy) if k == 0 else (sx, -sy)
                    out[l, k, j] = reflect_diff(g[k, j], l, dom, sx, sy)
                else:
                    out[l, k, j] = generic_diff(g[k, j], l, dom)
    return lq_norm(out, q, dom)


def w1p_norm(u: VectorField, dom: Domain, p: float) -> float:
    """``||u||_p + ||grad u||_p``."""
    return lq_norm(u, p, dom) + lq_norm(grad_vector(u, dom), p, dom)


# ---------------------------------------------------------------------------
# manufactured solution


def _mms_parts(X, Y, dom: Domain, c: float):
    a, b = np.pi / dom.Lx, np.pi / dom.Ly
    sx, cx = np.sin(a * X), np.cos(a * X)
    sy, cy = np.sin(b * Y), np.cos(b * Y)
    return a, b, sx, cx, sy, cy


def mms_values(X, Y, dom: Domain, c: float = 1.0):
    _, _, sx, cx, sy, cy = _mms_parts(X, Y, dom, c)
    return sx * cy, c * cx * sy


def mms_symgrad(X, Y, dom: Domain, c: float = 1.0) -> np.ndarray:
    """Closed-form ``D u*`` as an array ``(2, 2, ...)``."""
    a, b, sx, cx, sy, cy = _mms_parts(X, Y, dom, c)
    d11 = 2 * a * cx * cy
    d22 = 2 * c * b * cx * cy
    d12 = -(b + c * a) * sx * sy
    return np.array([[d11, d12], [d12, d22]])


def mms_field(dom: Domain, c: float = 1.0, variant: BcVariant | str | None = BcVariant.NAVIER) -> VectorField:
    """``u* = (sin(pi x/Lx) cos(pi y/Ly), c cos(pi x/Lx) sin(pi y/Ly))``.

    It is tangent to every face and has zero tangential stress and zero
    vorticity there, so it satisfies both slip variants exactly.
    """
    X, Y = dom.mesh
    u = VectorField(np.stack(mms_values(X, Y, dom, c)))
    return apply_slip_bc(u, variant, dom) if variant is not None else u


def mms_forcing(dom: Domain, p: float, mu: float, c: float = 1.0, step: float | None = None) -> VectorField:
    """``f = -div(B(Du*) Du*)`` by fourth-order differencing of the closed-form flux.

    The flux is sampled on an auxiliary stencil of spacing ``step`` (default
    ``h/8``) around every node.
    """
    from .stress import StressParams, b_times_D

    params = StressParams(p, mu)
    if step is None:
        step = min(dom.hx, dom.hy) / 8.0
    X, Y = dom.mesh

    def flux(Xs, Ys):
        return b_times_D(mms_symgrad(Xs, Ys, dom, c), params)

    f = np.zeros((2,) + dom.shape)
    coeffs = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))
    for i, shift in enumerate(((1, 0), (0, 1))):
        dT = 0.0
        for k, wgt in coeffs:
            dT = dT + wgt * flux(X + k * step * shift[0], Y + k * step * shift[1])[i]
        dT = dT / (12.0 * step)
        f -= dT
    return VectorField(f)


def mms_forcing_linear(dom: Domain, c: float = 1.0) -> VectorField:
    """Closed-form ``-div(Du*)`` (the p = 2 forcing)."""
    a, b = np.pi / dom.Lx, np.pi / dom.Ly
    X, Y = dom.mesh
    f1 = (2 * a * a + b * b + a * b * c) * np.sin(a * X) * np.cos(b * Y)
    f2 = (c * a * a + 2 * c * b * b + a * b) * np.cos(a * X) * np.sin(b * Y)
    return VectorField(np.stack([f1, f2]))


def smooth_random_field(dom: Domain, rng: np.random.Generator, modes: int = 4,
                        tangent: bool = True, decay: float = 1.5) -> VectorField:
    """Random low-frequency field.

    With ``tangent`` the field is a sine/cosine series compatible with the
    reflection parities (hence smooth after reflection and tangent to the
    boundary); otherwise arbitrary phases are used.
    """
    X, Y = dom.mesh
    a, b = np.pi / dom.Lx, np.pi / dom.Ly
    out = np.zeros((2,) + dom.shape)
    for k in range(modes + 1):
        for l in range(modes + 1):
            amp = (1.0 + k * k + l * l) ** (-decay / 2)
            c1, c2 = rng.standard_normal(2) * amp
            if tangent:
                if k > 0:
                    out[0] += c1 * np.sin(k * a * X) * np.cos(l * b * Y)
                if l > 0:
                    out[1] += c2 * np.cos(k * a * X) * np.sin(l * b * Y)
            else:
                ph = rng.uniform(0, 2 * np.pi, 4)
                out[0] += c1 * np.cos(k * a * X + ph[0]) * np.cos(l * b * Y + ph[1])
                out[1] += c2 * np.cos(k * a * X + ph[2]) * np.cos(l * b * Y + ph[3])
    u = VectorField(out)
    return apply_slip_bc(u, BcVariant.NAVIER, dom) if tangent else u


# ---------------------------------------------------------------------------
# CSV dumps


def dump_vector_csv(u: VectorField, dom: Domain, path: str | Path) -> None:
    X, Y = dom.mesh
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u1", "u2"])
        for row in zip(X.ravel(), Y.ravel(), u.values[0].ravel(), u.values[1].ravel()):
            w.writerow([f"{v:.17g}" for v in row])


def dump_tensor_csv(u: VectorField, D: TensorField, dom: Domain, path: str | Path) -> None:
    X, Y = dom.mesh
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "u1", "u2", "d11", "d12", "d22"])
        cols = (X, Y, u.values[0], u.values[1], D.values[0, 0], D.values[0, 1], D.values[1, 1])
        for row in zip(*(c.ravel() for c in cols)):
            w.writerow([f"{v:.17g}" for v in row])


def read_vector_csv(path: str | Path, dom: Domain) -> VectorField:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return VectorField(np.stack([data[:, 2].reshape(dom.shape), data[:, 3].reshape(dom.shape)]))


# ---------------------------------------------------------------------------
# assembled operators on the free (tangency-respecting) unknowns


class SlipOperators:
    """Sparse symmetric-gradient operator restricted to the free unknowns.

    The free unknowns are ``u1`` off the x-faces and ``u2`` off the y-faces.
    ``M`` maps them to the nodal components ``(D11, D12, D22)``; it is built
    by probing :func:`sym_grad` (ghost layer of the given variant) with
    3x3-colored unit vectors, so the assembled matrices follow exactly the
    boundary equations of that variant.

    With trapezoid weights ``w`` the weak form ``1/2 sum_w D u : D v`` is
    ``v^T (1/2 M^T W_D M) u`` where ``W_D = diag(w, 2w, w)``.
    """

    def __init__(self, dom: Domain, variant: BcVariant | str = BcVariant.NAVIER):
        self.dom = dom
        self.variant = BcVariant.parse(variant)
        nx, ny = dom.shape
        mask1 = np.ones(dom.shape, dtype=bool)
        mask1[[0, -1], :] = False
        mask2 = np.ones(dom.shape, dtype=bool)
        mask2[:, [0, -1]] = False
        self.masks = (mask1, mask2)
        self.idx = (np.flatnonzero(mask1.ravel()), np.flatnonzero(mask2.ravel()))
        self.n1 = self.idx[0].size
        self.nfree = self.n1 + self.idx[1].size
        self.nnodes = nx * ny
        w = dom.weights.ravel()
        self.node_weights = w
        self.wfree = np.concatenate([w[self.idx[0]], w[self.idx[1]]])
        self.WD = np.concatenate([w, 2 * w, w])
        self.M = self._probe()
        self.A = (0.5 * (self.M.T @ sp.diags(self.WD) @ self.M)).tocsr()

    def _probe(self) -> sp.csr_matrix:
        dom = self.dom
        rows, cols, vals = [], [], []
        I, J = np.meshgrid(np.arange(dom.shape[0]), np.arange(dom.shape[1]), indexing="ij")
        offset = 0
        for comp in range(2):
            mask = self.masks[comp]
            col_of = np.full(dom.shape, -1)
            col_of[mask] = np.arange(mask.sum()) + offset
            for cx in range(3):
                for cy in range(3):
                    sel = mask & (I % 3 == cx) & (J % 3 == cy)
                    if not sel.any():
                        continue
                    vals_arr = np.zeros((2,) + dom.shape)
                    vals_arr[comp][sel] = 1.0
                    D = sym_grad(VectorField(vals_arr, self.variant), dom).values
                    owner = np.full(dom.shape, -1)
                    owner[sel] = col_of[sel]
                    # each output node sees at most one probe of this color
                    pad_owner = np.pad(owner, 1, constant_values=-1)
                    for r, (a, b) in enumerate(((0, 0), (0, 1), (1, 1))):
                        Dab = D[a, b]
                        nz = np.flatnonzero(np.abs(Dab.ravel()) > 0)
                        if nz.size == 0:
                            continue
                        ii, jj = np.unravel_index(nz, dom.shape)
                        src = np.full(nz.size, -1)
                        for di, dj in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
                            cand = pad_owner[ii + 1 + di, jj + 1 + dj]
                            src = np.where(src < 0, cand, src)
                        if (src < 0).any():
                            raise RuntimeError("probe leakage while assembling slip operator")
                        rows.append(r * self.nnodes + nz)
                        cols.append(src)
                        vals.append(Dab.ravel()[nz])
            offset += mask.sum()
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * self.nnodes, self.nfree),
        )

    def to_free(self, u: VectorField) -> np.ndarray:
        return np.concatenate([u.values[0].ravel()[self.idx[0]], u.values[1].ravel()[self.idx[1]]])

    def to_field(self, x: np.ndarray) -> VectorField:
        out = np.zeros((2, self.nnodes))
        out[0, self.idx[0]] = x[: self.n1]
        out[1, self.idx[1]] = x[self.n1 :]
        return VectorField(out.reshape((2,) + self.dom.shape), self.variant)

    def free_values(self, f: VectorField) -> np.ndarray:
        """Nodal values of an arbitrary field at the free unknowns."""
        return self.to_free(f)

    def sym(self, x: np.ndarray) -> np.ndarray:
        """Components ``(D11, D12, D22)`` of ``D u`` at every node, shape ``(3, nnodes)``."""
        return (self.M @ x).reshape(3, self.nnodes)

    def sym_tensor(self, x: np.ndarray) -> TensorField:
        d = self.sym(x).reshape((3,) + self.dom.shape)
        return TensorField(np.array([[d[0], d[1]], [d[1], d[2]]]), symmetric=True, bc=self.variant)

    def weak(self, t: np.ndarray) -> np.ndarray:
        """``v -> 1/2 sum_w T : D v`` as a vector over the free unknowns; ``t`` is ``(3, nnodes)``."""
        return 0.5 * (self.M.T @ (self.WD * t.ravel()))

    def strong(self, t: np.ndarray) -> np.ndarray:
        """``-div T`` at the free unknowns (weak form divided by the nodal weights)."""
        return self.weak(t) / self.wfree


_OPS_CACHE: dict = {}


def slip_operators(dom: Domain, variant: BcVariant | str = BcVariant.NAVIER) -> SlipOperators:
    key = (dom, BcVariant.parse(variant))
    if key not in _OPS_CACHE:
        _OPS_CACHE[key] = SlipOperators(dom, key[1])
    return _OPS_CACHE[key]
