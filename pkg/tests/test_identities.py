import time

import numpy as np
import pytest

from pslip.grid import Domain, VectorField, generic_diff, mms_field, mms_forcing, sym_grad
from pslip.identities import (
    CROSS_NOTE,
    FACES,
    alt_weak_form_residual,
    alt_weak_functional,
    apriori_energy_check,
    bc_equivalence_probe,
    check_boundary_identities,
    check_green_curl,
    check_parts_identity,
    curl_algebra_check,
    format_table,
    observed_order,
    potential_field,
    run_battery,
    tangent_polynomial_field,
    untagged,
)
from pslip.linear import assemble, solve_linear
from pslip.solver import SlipProblem, fixed_point, test_fields as make_test_fields, weak_residual
from pslip.stress import StressParams

GRIDS = (16, 32, 64)


def doms():
    return [Domain(1.0, 0.7, N, N) for N in GRIDS]


def test_battery_passes_quickly():
    t0 = time.perf_counter()
    reports = run_battery()
    assert time.perf_counter() - t0 < 120
    assert len(reports) > 20
    for r in reports:
        assert r.passed, (r.name, r.residuals, r.order)
        assert len(r.residuals) == 3 and np.all(np.isfinite(r.residuals))
        assert CROSS_NOTE in r.notes
    table = format_table(reports)
    assert table.splitlines()[0].startswith("identity")


def test_parts_identity_affine_fields():
    res = []
    for d in doms():
        X, Y = d.mesh
        u = VectorField(np.stack([1 + 2 * X - Y, 0.5 * X + 3 * Y]))
        v = VectorField(np.stack([X + 0.3, -Y + 2 * X]))
        r = check_parts_identity(u, v, d, StressParams(1.6, 0.5))
        assert abs(r["volume"]) < 1e-9
        res.append(r["residual"])
    # corner trimming of the boundary quadrature is the only error: first order
    assert observed_order([d.h for d in doms()], res) > 0.9


def test_parts_identity_p2_is_linear_green_formula(dom32):
    u = tangent_polynomial_field(dom32, np.random.default_rng(0))
    v = potential_field(dom32)
    r = check_parts_identity(u, v, dom32, StressParams(2.0, 0.0))
    Du, Dv = sym_grad(u, dom32).values, sym_grad(v, dom32).values
    assert r["lhs"] == pytest.approx(0.5 * np.sum(dom32.weights * np.sum(Du * Dv, axis=(0, 1))), rel=1e-14)


def test_parts_identity_zero_stress_boundary_term_vanishes():
    bnd = []
    for d in doms():
        r = check_parts_identity(untagged(mms_field(d, 1.0)), untagged(mms_field(d, 0.4)), d, StressParams(1.7, 1.0))
        bnd.append(abs(r["boundary"]))
    assert bnd[0] > bnd[1] > bnd[2]


def test_green_curl_boundary_term_vanishes_for_mms():
    bnd = []
    for d in doms():
        r = check_green_curl(tangent_polynomial_field(d, np.random.default_rng(1)), untagged(mms_field(d, 0.8)), d)
        bnd.append(abs(r["boundary"]))
    assert observed_order([d.h for d in doms()], bnd) > 1.5


def test_green_curl_divergence_free(dom32):
    X, Y = dom32.mesh
    psi = np.sin(2 * X) * np.cos(3 * Y) + X**2 * Y
    u = VectorField(np.stack([generic_diff(psi, 1, dom32), -generic_diff(psi, 0, dom32)]))
    r = check_green_curl(u, potential_field(dom32), dom32)
    assert abs(r["lhs"]) < 1e-9 and abs(r["first"]) < 1e-9


def test_curl_algebra_closed_form():
    d = Domain()
    a, b, c = np.pi / d.Lx, np.pi / d.Ly, 1.3

    def grad_mms(x, y):
        # G[i, k] = d_i u_k for the manufactured field
        return np.array([[a * np.cos(a * x) * np.cos(b * y), -c * a * np.sin(a * x) * np.sin(b * y)],
                         [-b * np.sin(a * x) * np.sin(b * y), c * b * np.cos(a * x) * np.cos(b * y)]])

    def grad_poly(x, y):
        return np.array([[1 + 2 * x * y, 3 * y**2], [x**2 - 1, 6 * x * y + 0.5]])

    assert curl_algebra_check(grad_mms, dom=d) < 1e-13
    assert curl_algebra_check(grad_poly, dom=d) < 1e-13


def test_boundary_identities_cases(dom32):
    r = check_boundary_identities(mms_field(dom32, 1.1), mms_field(dom32, 0.5), dom32)
    assert r["lhs_max"] < 1e-12 and r["full"] < 1e-12
    u = tangent_polynomial_field(dom32, np.random.default_rng(2))
    v = tangent_polynomial_field(dom32, np.random.default_rng(3))
    r = check_boundary_identities(u, v, dom32)
    assert r["lhs_max"] > 0.1 and r["full"] <= 1e-12 * r["lhs_max"] and r["collapsed"] <= 1e-12 * r["lhs_max"]
    r = check_boundary_identities(u, VectorField.zeros(dom32), dom32)
    assert r == {"full": 0.0, "collapsed": 0.0, "lhs_max": 0.0}


def test_bc_equivalence(consts):
    for d in doms()[:2]:
        f = mms_forcing(d, 2.0, 0.0)
        out = bc_equivalence_probe(SlipProblem(d, StressParams(2.0, 0.0), 4.0, f), consts)
        assert out["discrepancy"] <= 1e-12
        pr = SlipProblem(d, StressParams(1.9, 1.0), 4.0, mms_forcing(d, 1.9, 1.0))
        out = bc_equivalence_probe(pr, consts, reference=mms_field(d))
        assert out["discrepancy"] <= 1e-10
        assert out["error_navier"] < 5 * d.h**2 and out["error_bardos"] < 5 * d.h**2
        zero = bc_equivalence_probe(pr.with_f(VectorField.zeros(d)), consts)
        assert zero["discrepancy"] == 0.0


def test_alt_weak_form_flat_and_injected(dom16, consts):
    pr = SlipProblem(dom16, StressParams(1.8, 1.0), 4.0, mms_forcing(dom16, 1.8, 1.0))
    u, _ = fixed_point(pr, consts)
    assert alt_weak_form_residual(u, pr) == weak_residual(u, pr)
    K = {"top": np.array([[0.7, -0.2], [0.1, 1.3]])}
    v = make_test_fields(dom16, 1, seed=4)[0]
    shift = alt_weak_functional(u, v, pr, K) - alt_weak_functional(u, v, pr)
    D = sym_grad(u, dom16).values
    B = (1.0 + np.sum(D * D, axis=(0, 1))) ** (-0.1)
    expect = 0.0
    for i in range(1, dom16.Nx + 1):
        uu, vv = u.values[:, i, -1], v.values[:, i, -1]
        expect += 2 * dom16.hx * B[i, -1] * sum(K["top"][k, m] * vv[k] * uu[m] for k in range(2) for m in range(2))
    assert shift == pytest.approx(expect, rel=1e-12)
    assert alt_weak_functional(u, u, pr, {f: np.zeros((2, 2)) for f in FACES}) == alt_weak_functional(u, u, pr)


def test_apriori_estimate(consts):
    slacks = []
    for d in doms():
        f = mms_forcing(d, 2.0, 1.0)
        pr = SlipProblem(d, StressParams(2.0, 1.0), 4.0, f, "bardos")
        u = solve_linear(assemble(d, "bardos"), f)
        assert apriori_energy_check(u, pr)["slack"] >= 0
        pr19 = SlipProblem(d, StressParams(1.9, 1.0), 4.0, mms_forcing(d, 1.9, 1.0), "bardos")
        u19, _ = fixed_point(pr19, consts)
        slacks.append(apriori_energy_check(u19, pr19)["slack"])
    assert min(slacks) >= 0
    d = doms()[0]
    zero = apriori_energy_check(VectorField.zeros(d), SlipProblem(d, StressParams(1.9, 1.0), 4.0, VectorField.zeros(d)))
    assert zero["slack"] == 0.0
    with pytest.raises(ValueError):
        apriori_energy_check(VectorField.zeros(d), SlipProblem(d, StressParams(1.9, 0.0), 4.0, VectorField.zeros(d)))
