"""Integral and boundary identities behind the weak formulation and the vorticity slip condition.

Every check works on grid samples of smooth fields and returns a residual;
:func:`run_battery` refines the grid and fits the observed order.

The three-dimensional cross products are realized in the plane by embedding
vectors as ``(a1, a2, 0)`` and the scalar vorticity as ``(0, 0, omega)``;
``n x omega`` then equals ``omega (n2, -n1)``.

Fields without a boundary tag are differenced with generic one-sided
stencils at the boundary, which makes the residuals converge instead of
vanishing; tagged fields use the reflection stencils, for which summation by
parts holds exactly.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import (
    BcVariant,
    Domain,
    VectorField,
    apply_slip_bc,
    curl2,
    div_tensor,
    divergence,
    grad_tensor,
    grad_vector,
    laplacian,
    lq_norm,
    mms_field,
    scalar_grad,
    smooth_random_field,
    sym_grad,
)
from .stress import StressParams, b_inverse, b_times_D, expansion_residual

log = logging.getLogger(__name__)

CROSS_NOTE = "3-D cross products realized in 2-D: n x omega -> omega (n2, -n1)"
EXACT_TOL = 1e-11


@dataclass
class IdentityReport:
    name: str
    grids: list = field(default_factory=list)
    h: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    order: float = float("nan")
    exact: bool = False
    passed: bool = False
    min_order: float = 0.9
    notes: list = field(default_factory=lambda: [CROSS_NOTE])

    def to_dict(self) -> dict:
        return asdict(self)


def observed_order(h, r) -> float:
    """Least-squares slope of ``log r`` against ``log h``."""
    h = np.asarray(h, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.size < 2 or np.any(r <= 0):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(r), 1)[0])


def finalize(report: IdentityReport, scale: float = 1.0) -> IdentityReport:
    """Fit the order; residuals at rounding level relative to ``scale`` count as exact."""
    r = np.asarray(report.residuals, dtype=float)
    if not np.all(np.isfinite(r)):
        report.passed = False
        return report
    report.exact = bool(np.all(r <= EXACT_TOL * max(scale, 1.0)))
    report.order = observed_order(report.h, r)
    report.passed = report.exact or (np.isfinite(report.order) and report.order >= report.min_order)
    return report


# ---------------------------------------------------------------------------
# boundary quadrature (corner nodes trimmed)


FACES = ("left", "right", "bottom", "top")
NORMALS = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0), "top": (0.0, 1.0)}


def face_slice(face: str):
    """Index of the face nodes without the two corners, as ``(slice_x, slice_y)``."""
    return {
        "left": (0, slice(1, -1)),
        "right": (-1, slice(1, -1)),
        "bottom": (slice(1, -1), 0),
        "top": (slice(1, -1), -1),
    }[face]


def face_spacing(face: str, dom: Domain) -> float:
    return dom.hy if face in ("left", "right") else dom.hx


def face_values(a: np.ndarray, face: str) -> np.ndarray:
    """Restrict ``a`` (trailing axes = nodes) to the trimmed face."""
    sx, sy = face_slice(face)
    return a[..., sx, sy]


def boundary_integral(integrand_fn, dom: Domain) -> float:
    """``sum over faces of h * sum_nodes integrand_fn(face, n)``; ``integrand_fn`` returns face-node values."""
    total = 0.0
    for face in FACES:
        total += face_spacing(face, dom) * float(np.sum(integrand_fn(face, np.array(NORMALS[face]))))
    return total


def volume_integral(a: np.ndarray, dom: Domain) -> float:
    return float(np.sum(dom.weights * a))


# ---------------------------------------------------------------------------
# fields


def tangent_polynomial_field(dom: Domain, rng: np.random.Generator, degree: int = 2) -> VectorField:
    """``u1 = x(Lx-x) P1``, ``u2 = y(Ly-y) P2`` with random polynomials; tangent, nonzero tangential stress."""
    X, Y = dom.mesh
    Xs, Ys = X / dom.Lx, Y / dom.Ly
    P = np.zeros((2,) + dom.shape)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c = rng.standard_normal(2)
            P[0] += c[0] * Xs**a * Ys**b
            P[1] += c[1] * Xs**a * Ys**b
    return VectorField(np.stack([Xs * (1 - Xs) * P[0], Ys * (1 - Ys) * P[1]]))


def potential_field(dom: Domain, k: float = 1.3, l: float = 0.8) -> VectorField:
    """``grad phi`` with ``phi = sin(k x) cos(l y) + x^2 y / 2`` from closed-form derivatives."""
    X, Y = dom.mesh
    return VectorField(np.stack([k * np.cos(k * X) * np.cos(l * Y) + X * Y,
                                 -l * np.sin(k * X) * np.sin(l * Y) + 0.5 * X**2]))


def untagged(u: VectorField) -> VectorField:
    return VectorField(u.values.copy())


def normalized_for_mu(u: VectorField, dom: Domain, mu: float) -> VectorField:
    """Scale ``u`` so that ``||Du||_inf = sqrt(mu) / 2``; the regularization then resolves the field."""
    if mu <= 0:
        return u
    s = lq_norm(sym_grad(u, dom), np.inf, dom)
    return u * (0.5 * np.sqrt(mu) / s) if s > 0 else u


def battery_fields(dom: Domain, mu: float = 1.0, seeds=range(6), amplitudes=(0.5, 1.0, 1.5),
                   modes: int = 2) -> list[tuple[str, VectorField]]:
    """Tagged smooth tangent fields shared by the expansion and parts identities."""
    out = []
    for c in amplitudes:
        out.append((f"mms c={c}", normalized_for_mu(mms_field(dom, c), dom, mu)))
    for s in seeds:
        rng = np.random.default_rng(s)
        out.append((f"random seed={s}", normalized_for_mu(smooth_random_field(dom, rng, modes=modes), dom, mu)))
    return out


# ---------------------------------------------------------------------------
# identities


def check_parts_identity(u: VectorField, v: VectorField, dom: Domain, params: StressParams) -> dict:
    """``1/2 int B Du:Dv = -int div(B Du).v + int_G (B Du n).v``.

    Returns the three terms, the residual and a scale (sum of magnitudes).
    """
    Dt = sym_grad(u, dom)
    BD = b_times_D(Dt.values, params)
    Dv = sym_grad(v, dom).values
    lhs = 0.5 * volume_integral(np.sum(BD * Dv, axis=(0, 1)), dom)
    from .grid import TensorField

    divBD = div_tensor(TensorField(BD, symmetric=True, bc=Dt.bc), dom).values
    vol = -volume_integral(np.sum(divBD * v.values, axis=0), dom)

    def integrand(face, n):
        t = np.einsum("ij...,j->i...", face_values(BD, face), n)
        return np.sum(t * face_values(v.values, face), axis=0)

    bnd = boundary_integral(integrand, dom) if Dt.bc is None else 0.0
    res = lhs - vol - bnd
    return {"lhs": lhs, "volume": vol, "boundary": bnd, "residual": abs(res),
            "scale": abs(lhs) + abs(vol) + abs(bnd)}


def _cross(a2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Cross product of planar vectors embedded in 3-D (leading axis = components)."""
    a3 = np.concatenate([a2, np.zeros((3 - a2.shape[0],) + a2.shape[1:])]) if a2.shape[0] < 3 else a2
    b3 = np.concatenate([b2, np.zeros((3 - b2.shape[0],) + b2.shape[1:])]) if b2.shape[0] < 3 else b2
    return np.moveaxis(np.cross(np.moveaxis(a3, 0, -1), np.moveaxis(b3, 0, -1)), -1, 0)


def n_cross_omega(n: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Planar part of ``n x (0, 0, omega)``."""
    nn = np.broadcast_to(np.asarray(n, dtype=float).reshape((2,) + (1,) * omega.ndim), (2,) + omega.shape)
    w = np.stack([np.zeros_like(omega), np.zeros_like(omega), omega])
    return _cross(nn, w)[:2]


def check_green_curl(u: VectorField, v: VectorField, dom: Domain) -> dict:
    """``int grad(div u).lap v = int grad(div u).grad(div v) - int_G grad(div u).(n x omega(v))``.

    Also returns the interior residual of ``lap v = grad(div v) - curl omega(v)``
    with the planar curl ``curl omega = (d2 omega, -d1 omega)``.
    """
    gdu = scalar_grad(divergence(u, dom), dom)
    gdv = scalar_grad(divergence(v, dom), dom)
    lap = laplacian(v, dom)
    om = curl2(v, dom)
    lhs = volume_integral(np.sum(gdu * lap, axis=0), dom)
    first = volume_integral(np.sum(gdu * gdv, axis=0), dom)

    def integrand(face, n):
        return np.sum(face_values(gdu, face) * n_cross_omega(n, face_values(om, face)), axis=0)

    bnd = boundary_integral(integrand, dom)
    go = scalar_grad(om, dom)
    curl_om = np.stack([go[1], -go[0]])
    decomp = lap - (gdv - curl_om)
    return {"lhs": lhs, "first": first, "boundary": bnd, "residual": abs(lhs - first + bnd),
            "scale": abs(lhs) + abs(first) + abs(bnd),
            "decomposition_residual": float(np.max(np.abs(decomp[:, 1:-1, 1:-1]))),
            "decomposition_scale": float(np.max(np.abs(lap)))}


def check_boundary_identities(u: VectorField, v: VectorField, dom: Domain) -> dict:
    """Face-node residuals of ``(Du n).v = (omega x n).v + 2 v.grad(u.n) - 2 (d_k n_i) v_k u_i``.

    On the flat faces of the rectangle ``d_k n_i = 0``. ``collapsed`` is the
    residual of ``(Du n).v = (omega x n).v`` (valid when ``u.n = 0`` and ``v``
    is tangent), ``lhs_max`` the largest ``|(Du n).v|``.
    """
    D = sym_grad(u, dom).values
    g = grad_vector(u, dom)
    om = curl2(u, dom)
    full = collapsed = lhs_max = 0.0
    for face in FACES:
        n = np.array(NORMALS[face])
        Dn = np.einsum("ij...,j->i...", face_values(D, face), n)
        vv = face_values(v.values, face)
        lhs = np.sum(Dn * vv, axis=0)
        w3 = np.stack([np.zeros_like(om), np.zeros_like(om), om])
        wxn = _cross(face_values(w3, face), np.broadcast_to(np.append(n, 0.0).reshape(3, 1), (3,) + lhs.shape))[:2]
        rot = np.sum(wxn * vv, axis=0)
        grad_un = np.einsum("kj...,j->k...", face_values(g, face), n)
        normal_term = 2 * np.sum(vv * grad_un, axis=0)
        full = max(full, float(np.max(np.abs(lhs - rot - normal_term))))
        collapsed = max(collapsed, float(np.max(np.abs(lhs - rot))))
        lhs_max = max(lhs_max, float(np.max(np.abs(lhs))))
    return {"full": full, "collapsed": collapsed, "lhs_max": lhs_max}


def curl_algebra_check(grad_fn, points_per_face: int = 3, dom: Domain | None = None) -> float:
    """``max |(d_i u_k - d_k u_i) n_i - (n x omega)... |`` from a closed-form gradient.

    ``grad_fn(x, y)`` returns the 2x2 array ``G[i, k] = d_i u_k``. The planar
    realization ``omega (n^perp)`` with ``n^perp = (n2, -n1)`` and the
    embedded 3-D product are compared, along with the identity
    ``(d_i u_k - d_k u_i) n_i = (omega x n)_k`` written with ``omega x n = -(n x omega)``.
    """
    dom = dom or Domain()
    worst = 0.0
    ts = (np.arange(points_per_face) + 1) / (points_per_face + 1)
    pts = {"left": [(0.0, t * dom.Ly) for t in ts], "right": [(dom.Lx, t * dom.Ly) for t in ts],
           "bottom": [(t * dom.Lx, 0.0) for t in ts], "top": [(t * dom.Lx, dom.Ly) for t in ts]}
    for face, plist in pts.items():
        n = np.array(NORMALS[face])
        for x, y in plist:
            G = np.asarray(grad_fn(x, y), dtype=float)
            om = G[0, 1] - G[1, 0]
            lhs = np.einsum("ik,i->k", G - G.T, n)
            planar = -om * np.array([n[1], -n[0]])
            embedded = -n_cross_omega(n, np.array(om))
            worst = max(worst, float(np.max(np.abs(lhs - planar))), float(np.max(np.abs(lhs - embedded))))
    return worst


# ---------------------------------------------------------------------------
# slip-condition equivalence, alternative weak form, a priori estimate


def bc_equivalence_probe(prob, consts, tol: float = 1e-12, reference: VectorField | None = None) -> dict:
    """Solve under both slip variants; relative L^2 discrepancy and, if given, errors against ``reference``."""
    from .continuation import ContinuationSchedule, run_continuation
    from .linear import assemble, solve_linear
    from .solver import fixed_point

    out = {}
    sols = {}
    for variant in BcVariant:
        pv = prob.with_variant(variant)
        if pv.p == 2:
            u = solve_linear(assemble(pv.dom, variant), pv.f, tol=tol)
        elif pv.mu > 0:
            u, _ = fixed_point(pv, consts, tol_fp=tol)
        else:
            u, _, _ = run_continuation(pv, ContinuationSchedule(relative=True), consts, tol=tol)
        sols[variant] = u
    a, b = sols[BcVariant.NAVIER], sols[BcVariant.BARDOS]
    na = lq_norm(a, 2, prob.dom)
    diff = lq_norm(a - b, 2, prob.dom)
    out["discrepancy"] = diff / na if na > 0 else diff
    if reference is not None:
        nr = lq_norm(reference, 2, prob.dom)
        for variant, u in sols.items():
            out[f"error_{variant.value}"] = lq_norm(u - reference, 2, prob.dom) / nr
    return out


def curvature_term(u: VectorField, v: VectorField, params: StressParams, dom: Domain, curvature) -> float:
    """``2 int_G B(Du) (d_k n_i) v_k u_i dS``; ``curvature`` maps face name to a 2x2 array ``K[k, i]``."""
    if not curvature:
        return 0.0
    D = sym_grad(u, dom).values
    s = params.mu + np.sum(D * D, axis=(0, 1))
    with np.errstate(divide="ignore"):
        B = np.where(s > 0, np.where(s > 0, s, 1.0) ** ((params.p - 2) / 2), 0.0)
    total = 0.0
    for face, K in curvature.items():
        K = np.asarray(K, dtype=float)
        vv = face_values(v.values, face)
        uu = face_values(u.values, face)
        integrand = face_values(B, face) * np.einsum("ki,k...,i...->...", K, vv, uu)
        total += 2.0 * face_spacing(face, dom) * float(np.sum(integrand))
    return total


def alt_weak_functional(u: VectorField, v: VectorField, prob, curvature=None) -> float:
    """``1/2 sum_w B Du:Dv + 2 int_G B (d_k n_i) v_k u_i - sum_w f.v``."""
    from .solver import weak_functional

    base = weak_functional(u, v, prob.f, prob.params, prob.dom)
    return base + curvature_term(u, v, prob.params, prob.dom, curvature)


def alt_weak_form_residual(u: VectorField, prob, n_test: int = 20, seed: int = 12345, curvature=None) -> float:
    """Weak residual in the vorticity form; equals the ordinary one on flat faces (``curvature=None``)."""
    from .grid import w1p_norm
    from .solver import test_fields

    if not u.tangent:
        u = apply_slip_bc(u, prob.variant, prob.dom)
    worst = 0.0
    for v in test_fields(prob.dom, n_test, seed, prob.variant):
        worst = max(worst, abs(alt_weak_functional(u, v, prob, curvature)) / w1p_norm(v, prob.dom, prob.p))
    return worst


def apriori_energy_check(u: VectorField, prob) -> dict:
    """``rhs - lhs`` for ``||lap u||^2 + ||grad div u||^2 <= (2-p) int |grad Du||lap u| + int b^-1 |f||lap u|``."""
    dom = prob.dom
    if prob.mu <= 0 and prob.p < 2:
        raise ValueError("the a priori estimate is stated for mu > 0")
    lap = laplacian(u, dom)
    div = divergence(u, dom)
    gdiv = scalar_grad(div, dom, (1, 1) if u.tangent else None)
    Dt = sym_grad(u, dom)
    gD = grad_tensor(Dt, dom)
    mag_lap = np.sqrt(np.sum(lap**2, axis=0))
    lhs = volume_integral(np.sum(lap**2, axis=0), dom) + volume_integral(np.sum(gdiv**2, axis=0), dom)
    mag_gD = np.sqrt(np.sum(gD**2, axis=(0, 1, 2)))
    mag_f = np.sqrt(np.sum(prob.f.values**2, axis=0))
    rhs = (2 - prob.p) * volume_integral(mag_gD * mag_lap, dom)
    rhs += volume_integral(b_inverse(Dt.values, prob.params) * mag_f * mag_lap, dom)
    return {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs, "relative_slack": (rhs - lhs) / lhs if lhs > 0 else 0.0}


# ---------------------------------------------------------------------------
# battery


def _domains(grids, Lx=1.0, Ly=0.7):
    return [Domain(Lx, Ly, N, N) for N in grids]


def expansion_report(label: str, make_field, params: StressParams, grids=(16, 32, 64),
                     min_order: float = 0.9) -> IdentityReport:
    """Sup-norm of the expansion residual ``div(B Du) - [B div Du + (p-2)(...)I(u)]``."""
    rep = IdentityReport(f"expansion [{label}]", list(grids), min_order=min_order)
    for dom in _domains(grids):
        u = make_field(dom)
        rep.h.append(dom.h)
        rep.residuals.append(float(np.max(np.abs(expansion_residual(u, params, dom)))))
    return finalize(rep)


def run_battery(grids=(16, 32, 64), p: float = 1.7, mu: float = 1.0, seeds=range(6)) -> list[IdentityReport]:
    """All identity checks over the grid sequence; one report per (identity, field pair)."""
    t0 = time.perf_counter()
    params = StressParams(p, mu)
    doms = _domains(grids)
    reports: list[IdentityReport] = []

    # expansion identity on the shared battery
    n_fields = len(battery_fields(doms[0], mu, seeds))
    for i in range(n_fields):
        label = battery_fields(doms[0], mu, seeds)[i][0]
        reports.append(expansion_report(label, lambda d, i=i: battery_fields(d, mu, seeds)[i][1], params, grids))

    # integration by parts: generic differencing, full boundary term
    pairs = [
        ("mms/mms", lambda d: untagged(battery_fields(d, mu, seeds)[0][1]), lambda d: untagged(mms_field(d, 1.5))),
        ("random/polynomial", lambda d: untagged(battery_fields(d, mu, seeds)[3][1]),
         lambda d: tangent_polynomial_field(d, np.random.default_rng(7))),
        ("polynomial/potential", lambda d: tangent_polynomial_field(d, np.random.default_rng(3)) * 0.2,
         lambda d: potential_field(d)),
        ("potential/random phases", lambda d: potential_field(d) * 0.1,
         lambda d: smooth_random_field(d, np.random.default_rng(11), modes=2, tangent=False)),
    ]
    for label, mk_u, mk_v in pairs:
        for prm, tag in ((params, f"p={p}"), (StressParams(2.0, mu), "p=2")):
            rep = IdentityReport(f"integration by parts [{label}, {tag}]", list(grids))
            scale = 0.0
            for dom in doms:
                r = check_parts_identity(mk_u(dom), mk_v(dom), dom, prm)
                rep.h.append(dom.h)
                rep.residuals.append(r["residual"])
                scale = max(scale, r["scale"])
            reports.append(finalize(rep, scale))

    # exact summation by parts with the reflection stencils
    rep = IdentityReport("summation by parts [tagged fields, exact]", list(grids))
    scale = 0.0
    for dom in doms:
        u = battery_fields(dom, mu, seeds)[4][1]
        v = smooth_random_field(dom, np.random.default_rng(5), modes=3)
        r = check_parts_identity(u, v, dom, params)
        rep.h.append(dom.h)
        rep.residuals.append(r["residual"])
        scale = max(scale, r["scale"])
    reports.append(finalize(rep, scale))

    # Green identity with the curl and the Laplacian decomposition
    green_pairs = [
        ("potential/potential", lambda d: potential_field(d), lambda d: potential_field(d)),
        ("polynomial/mms", lambda d: tangent_polynomial_field(d, np.random.default_rng(1)),
         lambda d: untagged(mms_field(d, 1.0))),
        ("random phases/polynomial", lambda d: smooth_random_field(d, np.random.default_rng(2), modes=2, tangent=False),
         lambda d: tangent_polynomial_field(d, np.random.default_rng(4))),
    ]
    for label, mk_u, mk_v in green_pairs:
        rep = IdentityReport(f"green identity with curl [{label}]", list(grids))
        dec = IdentityReport(f"laplacian decomposition [{label}]", list(grids))
        scale = dscale = 0.0
        for dom in doms:
            r = check_green_curl(mk_u(dom), mk_v(dom), dom)
            rep.h.append(dom.h)
            rep.residuals.append(r["residual"])
            dec.h.append(dom.h)
            dec.residuals.append(r["decomposition_residual"])
            scale = max(scale, r["scale"])
            dscale = max(dscale, r["decomposition_scale"])
        reports.append(finalize(rep, scale))
        reports.append(finalize(dec, dscale))

    # boundary identities
    for label, mk_u, mk_v in [
        ("polynomial/polynomial", lambda d: tangent_polynomial_field(d, np.random.default_rng(8)),
         lambda d: tangent_polynomial_field(d, np.random.default_rng(9))),
        ("mms/random", lambda d: mms_field(d, 0.7), lambda d: smooth_random_field(d, np.random.default_rng(6), modes=2)),
        ("random phases/random phases", lambda d: smooth_random_field(d, np.random.default_rng(12), modes=2, tangent=False),
         lambda d: smooth_random_field(d, np.random.default_rng(13), modes=2, tangent=False)),
    ]:
        rep = IdentityReport(f"boundary identity [{label}]", list(grids))
        scale = 0.0
        for dom in doms:
            r = check_boundary_identities(mk_u(dom), mk_v(dom), dom)
            rep.h.append(dom.h)
            rep.residuals.append(r["full"])
            scale = max(scale, r["lhs_max"])
        reports.append(finalize(rep, scale))
    rep = IdentityReport("boundary identity, flat-face form [polynomial/polynomial]", list(grids))
    scale = 0.0
    for dom in doms:
        r = check_boundary_identities(tangent_polynomial_field(dom, np.random.default_rng(8)),
                                      tangent_polynomial_field(dom, np.random.default_rng(9)), dom)
        rep.h.append(dom.h)
        rep.residuals.append(r["collapsed"])
        scale = max(scale, r["lhs_max"])
    reports.append(finalize(rep, scale))

    # alternative weak form on flat faces coincides with the weak form
    from .solver import SlipProblem, weak_residual
    from .grid import mms_forcing

    rep = IdentityReport("alternative weak form = weak form [flat faces]", list(grids))
    for dom in doms:
        prob = SlipProblem(dom, params, 4.0, mms_forcing(dom, p, mu))
        u = mms_field(dom)
        rep.h.append(dom.h)
        rep.residuals.append(abs(alt_weak_form_residual(u, prob, n_test=5) - weak_residual(u, prob, n_test=5)))
    reports.append(finalize(rep))

    log.info("identity battery: %d reports in %.2f s", len(reports), time.perf_counter() - t0)
    return reports


def format_table(reports: list[IdentityReport]) -> str:
    """Plain-text table ``identity | h | residual | order``."""
    lines = [f"{'identity':<62} {'h':>9} {'residual':>11} {'order':>6} status"]
    for r in reports:
        for k, (h, res) in enumerate(zip(r.h, r.residuals)):
            tail = ""
            if k == len(r.h) - 1:
                status = "exact" if r.exact else ("pass" if r.passed else "FAIL")
                order = "     -" if r.exact else f"{r.order:6.2f}"
                tail = f" {order} {status}"
            lines.append(f"{r.name if k == 0 else '':<62} {h:9.5f} {res:11.3e}{tail}")
    return "\n".join(lines)
