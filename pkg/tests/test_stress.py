import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pslip.grid import Domain, VectorField, lq_norm, smooth_random_field, sym_grad, w2q_surrogate
from pslip.identities import battery_fields, observed_order
from pslip.stress import (
    SingularPointError,
    StressParams,
    b_coeff,
    b_times_D,
    check_difference_bound,
    check_subadditivity,
    expansion_residual,
    frob2,
    g_vector,
    i_vector,
    monotonicity_gap,
    nodal_quantities,
    rhs_F,
)

sym_entries = arrays(np.float64, 3, elements=st.floats(-1e3, 1e3))


def sym(e):
    return np.array([[e[0], e[1]], [e[1], e[2]]])


def random_fields(dom, n, seed, tangent=True):
    rng = np.random.default_rng(seed)
    return [smooth_random_field(dom, rng, modes=3, tangent=tangent) for _ in range(n)]


def test_b_coeff_examples():
    D = np.array([[1.0, 0.0], [0.0, 0.0]])
    for p in (1.2, 1.5, 2.0):
        assert b_coeff(D, StressParams(p, 0.0)) == pytest.approx(1.0)
    assert b_coeff(np.zeros((2, 2)), StressParams(1.5, 1.0)) == 1.0
    D4 = np.array([[np.sqrt(2.0), 1.0], [1.0, 0.0]])
    assert frob2(D4) == pytest.approx(4.0)
    assert b_coeff(D4, StressParams(1.5, 0.0)) == pytest.approx(4 ** -0.25, rel=1e-14)
    with pytest.raises(SingularPointError):
        b_coeff(np.zeros((2, 2)), StressParams(1.5, 0.0))
    assert b_coeff(np.zeros((2, 2)), StressParams(2.0, 0.0)) == 1.0


def test_params_validation():
    for p, mu in ((1.0, 0.0), (2.5, 0.0), (1.5, -1.0)):
        with pytest.raises(ValueError):
            StressParams(p, mu)


def test_b_times_D_examples():
    for mu in (0.0, 1e-6, 1.0):
        assert np.all(b_times_D(np.zeros((2, 2)), StressParams(1.4, mu)) == 0)
    D = sym([0.3, -2.0, 5.0])
    assert np.array_equal(b_times_D(D, StressParams(2.0, 7.0)), D)


@given(e=sym_entries, lam=st.floats(1e-3, 1e3), p=st.floats(1.05, 2.0))
def test_b_times_D_homogeneous(e, lam, p):
    D = sym(e)
    prm = StressParams(p, 0.0)
    lhs = b_times_D(lam * D, prm)
    rhs = lam ** (p - 1) * b_times_D(D, prm)
    assert np.allclose(lhs, rhs, rtol=1e-11, atol=1e-300)


@given(a=sym_entries, b=sym_entries, p=st.floats(1.05, 2.0), mu=st.sampled_from([0.0, 1e-6, 1e-2, 1.0]))
def test_flux_monotone(a, b, p, mu):
    A, B = sym(a), sym(b)
    gap = monotonicity_gap(A, B, StressParams(p, mu))
    scale = np.sqrt(frob2(A - B)) * (np.sqrt(frob2(b_times_D(A, StressParams(p, mu)))) +
                                     np.sqrt(frob2(b_times_D(B, StressParams(p, mu)))))
    assert gap >= -1e-12 * max(scale, 1e-300)


def test_i_vector_brute_force():
    d = Domain(1.0, 0.7, 5, 6)
    X, Y = d.mesh
    rng = np.random.default_rng(1)
    c = rng.standard_normal((2, 6))
    u = VectorField(np.stack([c[i, 0] + c[i, 1] * X + c[i, 2] * Y + c[i, 3] * X * Y + c[i, 4] * X**2
                              + c[i, 5] * Y**2 for i in range(2)]))
    D, gD = nodal_quantities(u, d)
    I = i_vector(D, gD)
    ref = np.zeros_like(I)
    for j in range(2):
        for k in range(2):
            for l in range(2):
                for m in range(2):
                    ref[j] += D[l, m] * gD[k, l, m] * D[k, j]
    assert np.abs(I - ref).max() <= 1e-13 * np.abs(ref).max()
    lin = VectorField(np.stack([1 + 2 * X - Y, 3 * X + 0.5 * Y]))
    D, gD = nodal_quantities(lin, d)
    assert np.abs(i_vector(D, gD)).max() < 1e-10
    assert np.abs(g_vector(D, gD, StressParams(1.5, 1.0))).max() < 1e-10


def test_i_bound_every_node(dom32):
    for tangent in (True, False):
        for u in random_fields(dom32, 25, 3 if tangent else 4, tangent):
            D, gD = nodal_quantities(u, dom32)
            I = np.sqrt(np.sum(i_vector(D, gD) ** 2, axis=0))
            bound = frob2(D) * np.sqrt(np.sum(gD**2, axis=(0, 1, 2)))
            assert np.all(I <= bound)


def test_g_bound(dom32):
    for mu in (0.0, 1e-4, 1.0):
        for u in random_fields(dom32, 50, 7):
            D, gD = nodal_quantities(u, dom32)
            G = g_vector(D, gD, StressParams(1.7, mu))
            for q in (2.0, 3.0, 4.0, np.inf):
                assert lq_norm(G, q, dom32) <= lq_norm(gD, q, dom32)


def test_g_decays_like_inverse_mu(dom16):
    u = random_fields(dom16, 1, 2)[0]
    D, gD = nodal_quantities(u, dom16)
    norms = [lq_norm(g_vector(D, gD, StressParams(1.5, mu)), 2, dom16) for mu in (1e6, 1e7, 1e8)]
    assert norms[0] / norms[1] == pytest.approx(10, rel=1e-2)
    assert norms[1] / norms[2] == pytest.approx(10, rel=1e-3)


def test_rhs_F(dom16):
    u = random_fields(dom16, 1, 9)[0]
    f = smooth_random_field(dom16, np.random.default_rng(3), tangent=False)
    assert np.array_equal(rhs_F(u, f, StressParams(2.0, 0.3), dom16).values, f.values)
    X, Y = dom16.mesh
    aff = VectorField(np.stack([X - 2 * Y, X + Y]))
    assert np.abs(rhs_F(aff, VectorField.zeros(dom16), StressParams(1.6, 0.5), dom16).values).max() < 1e-10
    chat = 0.35
    for p, mu in ((1.8, 1.0), (1.6, 1e-2)):
        F = rhs_F(u, f, StressParams(p, mu), dom16)
        gd = w2q_surrogate(u, dom16, 4)
        fn = lq_norm(f, 4, dom16)
        dinf = lq_norm(sym_grad(u, dom16), np.inf, dom16)
        # the embedding constant measured on this very field
        chat_u = max(chat, dinf / gd)
        bound = (2 - p) * gd + mu ** ((2 - p) / 2) * fn + chat_u ** (2 - p) * gd ** (2 - p) * fn
        assert lq_norm(F, 4, dom16) <= bound


@given(a=st.floats(0, 1e6), b=st.floats(0, 1e6), alpha=st.floats(0.01, 0.99))
def test_subadditivity(a, b, alpha):
    assert check_subadditivity(a, b, alpha)


def test_subadditivity_example():
    assert check_subadditivity(1.0, 1.0, 0.5)


def test_difference_bound_stable_across_mu():
    rng = np.random.default_rng(0)
    n = 20000
    A = rng.standard_normal((2, 2, n)) * 10 ** rng.uniform(-3, 3, n)
    B = rng.standard_normal((2, 2, n)) * 10 ** rng.uniform(-3, 3, n)
    A = 0.5 * (A + A.transpose(1, 0, 2))
    B = 0.5 * (B + B.transpose(1, 0, 2))
    sups = [check_difference_bound(A, B, mu, 1.5).max() for mu in (0.0, 1e-6, 1e-3, 1.0)]
    assert all(np.isfinite(sups)) and max(sups) < 3.0
    assert max(sups) / min(sups) < 2.0
    assert check_difference_bound(A[..., :1], A[..., :1], 0.5, 1.5)[0] == 0.0


def test_expansion_identity_second_order():
    params = StressParams(1.7, 1.0)
    res = {}
    for N in (16, 32, 64):
        d = Domain(1.0, 0.7, N, N)
        for label, u in battery_fields(d, 1.0, seeds=range(2), amplitudes=(1.0,)):
            res.setdefault(label, []).append((d.h, np.abs(expansion_residual(u, params, d)).max()))
    for label, rows in res.items():
        h, r = zip(*rows)
        assert observed_order(h, r) >= 1.9, label
