import math

import numpy as np
import pytest

from kamtori import fourier as fr
from kamtori.fourier import WeightedNormContext
from kamtori.weights import WeightFunction

GRID = np.linspace(0.25, 0.75, 5)
THETAS = np.arange(4096) / 4096.0
ANALYTIC = WeightFunction("analytic")
GEVREY = WeightFunction("gevrey", 0.5)


def rand_scalar(rng, support, scale=1.0, real=False, grid=GRID):
    modes = {}
    for k in range(1, support + 1):
        c = scale * (rng.standard_normal() + 1j * rng.standard_normal())
        modes[k] = c
        modes[-k] = np.conj(c) if real else scale * (
            rng.standard_normal() + 1j * rng.standard_normal())
    if real:
        modes[0] = scale * rng.standard_normal()
    return fr.from_modes(grid, fr.SCALAR, modes)


def cos_series(grid=GRID):
    return fr.from_modes(grid, fr.SCALAR, {1: 0.5, -1: 0.5})


# -- norms ------------------------------------------------------------------------


def test_norm_constant():
    f = fr.constant(GRID, 5.0)
    ctx = WeightedNormContext(ANALYTIC, 0.3)
    assert fr.norm_r(f, ctx) == 5.0  # Lambda(0) = 0


def test_norm_cos_analytic():
    ctx = WeightedNormContext(ANALYTIC, 0.1)
    # two coefficients of 1/2 at k = +-1: 2 * (1/2) e^{0.2 pi}
    assert fr.norm_r(cos_series(), ctx) == pytest.approx(
        math.exp(0.2 * math.pi), rel=1e-14)


def test_norm_cos_gevrey():
    ctx = WeightedNormContext(GEVREY, 0.1)
    assert fr.norm_r(cos_series(), ctx) == pytest.approx(
        math.exp(math.sqrt(0.2 * math.pi)), rel=1e-14)


def test_norm_includes_lambda_derivative():
    vals = 1.0 + (GRID - 0.5)  # slope 1 in lambda
    f = fr.from_modes(GRID, fr.SCALAR, {0: vals})
    ctx = WeightedNormContext(ANALYTIC, 0.1, include_lambda_derivative=True)
    # sup(|f| + |df/dlambda|) = 1.25 + 1 at the right endpoint
    assert fr.norm_r(f, ctx) == pytest.approx(2.25, rel=1e-12)
    ctx2 = WeightedNormContext(ANALYTIC, 0.1, include_lambda_derivative=False)
    assert fr.norm_r(f, ctx2) == pytest.approx(1.25, rel=1e-12)


def test_norm_vector_matrix_max_over_entries():
    v = fr.vector_from_scalars(fr.constant(GRID, 3.0), fr.constant(GRID, -7.0))
    ctx = WeightedNormContext(ANALYTIC, 0.1)
    assert fr.norm_r(v, ctx) == 7.0


def test_empty_grid_rejected():
    f = fr.FourierSeries(np.array([]), fr.SCALAR, {})
    with pytest.raises(ValueError):
        fr.norm_r(f, WeightedNormContext(ANALYTIC, 0.1))


# -- norm_rs ----------------------------------------------------------------------


def test_norm_rs_examples():
    ctx = WeightedNormContext(ANALYTIC, 0.1)
    jet = fr.PowerFourierSeries(4, GRID, fr.SCALAR, {})
    assert fr.norm_rs(jet, ctx, 0.5) == 0.0
    jet.set_term((2, 0), fr.one(GRID))
    assert fr.norm_rs(jet, ctx, 0.5) == pytest.approx(0.25)
    jet2 = fr.PowerFourierSeries(4, GRID, fr.SCALAR, {})
    jet2.set_term((1, 1), fr.one(GRID))
    jet2.set_term((2, 1), fr.one(GRID))
    assert fr.norm_rs(jet2, ctx, 0.1) == pytest.approx(0.011)


# -- truncation -------------------------------------------------------------------


def test_truncate_tail_examples():
    f = fr.from_modes(GRID, fr.SCALAR, {0: 1.0, 3: 1.0})
    t = f.truncate(2)
    tail = f.project_tail(2)
    assert t.support == [0]
    assert tail.support == [3]
    g = fr.from_modes(GRID, fr.SCALAR, {0: 2.0, 1: 1.0, -2: 1.0})
    assert g.truncate(1).support == [0]  # average term only


def test_truncate_partition_exhaustive():
    rng = np.random.default_rng(5)
    f = rand_scalar(rng, 10)
    t, tail = f.truncate(5), f.project_tail(5)
    for k in f.coeffs:
        lhs = t.coeff(k) + tail.coeff(k)
        assert np.array_equal(lhs, f.coeff(k))
    assert set(t.coeffs) | set(tail.coeffs) == set(f.coeffs)
    assert not (set(t.coeffs) & set(tail.coeffs))


# -- average ----------------------------------------------------------------------


def test_average_examples():
    assert np.all(cos_series().average() == 0)
    assert np.all(fr.constant(GRID, 3.0).average() == 3.0)
    rng = np.random.default_rng(6)
    f = rand_scalar(rng, 7)
    quad = f.eval_theta(THETAS).mean(axis=0)
    assert np.abs(f.average() - quad).max() < 1e-12


# -- products ---------------------------------------------------------------------


def test_multiply_identity_and_phase():
    rng = np.random.default_rng(7)
    f = rand_scalar(rng, 6)
    prod = fr.multiply(f, fr.one(GRID))
    for k in f.coeffs:
        assert np.allclose(prod.coeff(k), f.coeff(k), rtol=0, atol=0)
    e1 = fr.from_modes(GRID, fr.SCALAR, {1: 1.0})
    em1 = fr.from_modes(GRID, fr.SCALAR, {-1: 1.0})
    p = fr.multiply(e1, em1)
    assert p.support == [0]
    assert np.allclose(p.coeff(0), 1.0)


def test_multiply_quadrature_oracle():
    rng = np.random.default_rng(8)
    f = rand_scalar(rng, 9)
    g = rand_scalar(rng, 6)
    prod = fr.multiply(f, g)
    pointwise = f.eval_theta(THETAS) * g.eval_theta(THETAS)
    fft = np.fft.fft(pointwise, axis=0) / len(THETAS)
    for k, v in prod.coeffs.items():
        assert np.abs(fft[k % len(THETAS)] - v).max() < 1e-10


def test_multiply_kind_dispatch():
    v = fr.conjugate_pair(cos_series())
    m = fr.eye(GRID)
    assert fr.multiply(m, v).kind == fr.C2VECTOR
    assert fr.multiply(m, m).kind == fr.SU11MATRIX
    with pytest.raises(fr.KindMismatch):
        fr.multiply(v, v)
    with pytest.raises(fr.KindMismatch):
        fr.multiply(v, m)


def test_banach_algebra_200_trials():
    rng = np.random.default_rng(9)
    for w in (ANALYTIC, GEVREY):
        ctx = WeightedNormContext(w, 0.05)
        for _ in range(100):
            f = rand_scalar(rng, int(rng.integers(1, 33)))
            g = rand_scalar(rng, int(rng.integers(1, 33)))
            lhs = fr.norm_r(fr.multiply(f, g), ctx)
            rhs = fr.norm_r(f, ctx) * fr.norm_r(g, ctx)
            assert lhs <= rhs * (1 + 1e-10)


# -- shifts and conjugation ----------------------------------------------------------


def test_shift_matches_pointwise():
    from kamtori import cfrac as cfr
    gm = cfr.golden_mean()
    rng = np.random.default_rng(10)
    f = rand_scalar(rng, 5)
    sh = f.shift(gm.phase)
    alpha = float(gm.alpha)
    direct = f.eval_theta((THETAS[:64] + alpha) % 1.0)
    assert np.abs(sh.eval_theta(THETAS[:64]) - direct).max() < 1e-9


def test_conj_series_pointwise():
    rng = np.random.default_rng(11)
    f = rand_scalar(rng, 5)
    c = f.conj()
    assert np.abs(c.eval_theta(THETAS[:64])
                  - np.conj(f.eval_theta(THETAS[:64]))).max() < 1e-13


# -- exponentials ---------------------------------------------------------------------


def test_exp_i_scalar_trivial():
    z = fr.zeros(GRID)
    e = fr.exp_i_scalar(z, 1)
    assert e.support == [0]
    assert np.allclose(e.coeff(0), 1.0)
    c = fr.constant(GRID, 0.125)
    e2 = fr.exp_i_scalar(c, 2)
    assert np.allclose(e2.coeff(0), np.exp(2j * np.pi * 2 * 0.125))


def test_exp_i_scalar_pointwise_oracle():
    B = fr.from_modes(GRID, fr.SCALAR, {1: 0.005, -1: 0.005})  # 0.01 cos
    e = fr.exp_i_scalar(B, 1)
    vals = e.eval_theta(THETAS)
    expect = np.exp(2j * np.pi * B.eval_theta(THETAS))
    assert np.abs(vals - expect).max() < 1e-10
    assert np.abs(np.abs(vals) - 1).max() < 1e-10


def test_exp_i_scalar_rejects_complex():
    B = fr.from_modes(GRID, fr.SCALAR, {1: 1.0j})
    with pytest.raises(ValueError):
        fr.exp_i_scalar(B, 1)


def test_exp_i_scalar_inverse_identity():
    rng = np.random.default_rng(12)
    B = rand_scalar(rng, 4, scale=0.02, real=True)
    prod = fr.multiply(fr.exp_i_scalar(B, 1), fr.exp_i_scalar(B.scale(-1), 1))
    dev = fr.norm_r(prod - fr.one(GRID), WeightedNormContext(ANALYTIC, 0.05))
    assert dev < 1e-10


def test_exp_su11_constant_oracle():
    c = 0.3
    D = fr.off_diagonal(fr.constant(GRID, c))
    E = fr.exp_su11(D)
    # 2x2 matrix exponential oracle for [[0, c], [c, 0]]
    m = E.coeff(0)[0]
    assert m[0, 0] == pytest.approx(np.cosh(c), rel=1e-14)
    assert m[0, 1] == pytest.approx(np.sinh(c), rel=1e-14)
    assert m[1, 0] == pytest.approx(np.sinh(c), rel=1e-14)


def test_exp_su11_determinant_random():
    rng = np.random.default_rng(13)
    for _ in range(10):
        d = rand_scalar(rng, 4, scale=0.02)
        E = fr.exp_su11(fr.off_diagonal(d))
        vals = E.eval_theta(THETAS[::16])
        det = vals[..., 0, 0] * vals[..., 1, 1] - vals[..., 0, 1] * vals[..., 1, 0]
        assert np.abs(det - 1).max() < 1e-12


def test_exp_su11_rejects_diagonal():
    D = fr.matrix_from_scalars(fr.constant(GRID, 0.1), fr.zeros(GRID),
                               fr.zeros(GRID), fr.constant(GRID, 0.1))
    with pytest.raises(ValueError):
        fr.exp_su11(D)


def test_exp_series_cap():
    big = fr.constant(GRID, 50.0)
    with pytest.raises(fr.PowerSeriesDiverged):
        fr.exp_i_scalar(big, 2)


# -- structure preservation --------------------------------------------------------------


def test_structure_preserved_by_algebra():
    rng = np.random.default_rng(14)
    v = fr.conjugate_pair(rand_scalar(rng, 4))
    a, b = rand_scalar(rng, 3), rand_scalar(rng, 3)
    W = fr.matrix_from_scalars(a, b, b.conj(), a.conj())
    assert fr.c2_pair_defect(v) < 1e-15
    assert fr.su11_defect(W) < 1e-15
    # products keep the patterns
    assert fr.c2_pair_defect(fr.multiply(W, v)) < 1e-13
    W2 = fr.matrix_from_scalars(*(rand_scalar(rng, 2) for _ in range(2)),
                                *(fr.zeros(GRID), fr.zeros(GRID)))
    prod = fr.multiply(W, W)
    assert fr.su11_defect(prod) < 1e-13
    assert fr.su11_defect(fr.exp_su11(fr.off_diagonal(a))) < 1e-13
    assert fr.c2_pair_defect(v.truncate(3)) < 1e-15


# -- analytic norm ---------------------------------------------------------------------


def test_analytic_norm_examples():
    ctx = WeightedNormContext(ANALYTIC, 0.1)
    assert fr.analytic_norm(fr.one(GRID), ctx) == 1.0
    assert fr.analytic_norm(cos_series(), ctx) == pytest.approx(
        math.exp(0.2 * math.pi), rel=1e-14)


def test_analytic_norm_dominates_when_argument_large():
    # Lambda(y) <= y needs y >= 1 for gevrey: with 2 pi r >= 1 every
    # supported mode qualifies
    rng = np.random.default_rng(15)
    ctx = WeightedNormContext(GEVREY, 0.2)
    for _ in range(100):
        f = rand_scalar(rng, int(rng.integers(1, 20)))
        assert fr.norm_r(f, ctx) <= fr.analytic_norm(f, ctx) * (1 + 1e-12)


def test_analytic_norm_small_argument_counterexample():
    # recorded: for 2 pi |k| r < 1 the gevrey weight exceeds the analytic one
    f = fr.from_modes(GRID, fr.SCALAR, {1: 1.0})
    ctx = WeightedNormContext(GEVREY, 0.01)
    assert fr.norm_r(f, ctx) > fr.analytic_norm(f, ctx)


# -- jets -----------------------------------------------------------------------------


def test_jet_eval_and_compose():
    rng = np.random.default_rng(16)
    jet = fr.PowerFourierSeries(4, GRID, fr.C2VECTOR, {})
    for m in [(2, 0), (1, 1), (0, 3)]:
        jet.set_term(m, fr.conjugate_pair(rand_scalar(rng, 2)))
    d1 = rand_scalar(rng, 2, scale=0.1)
    d2 = d1.conj()
    val = jet.eval_at_series(d1, d2)
    # pointwise oracle
    x = np.stack([d1.eval_theta(THETAS[:128]), d2.eval_theta(THETAS[:128])],
                 axis=-1)
    direct = jet.eval_at_points(x, THETAS[:128])
    assert np.abs(val.eval_theta(THETAS[:128]) - direct).max() < 1e-12


def test_jet_affine_composition_exact():
    rng = np.random.default_rng(17)
    jet = fr.PowerFourierSeries(3, GRID, fr.C2VECTOR, {})
    jet.set_term((2, 0), fr.conjugate_pair(rand_scalar(rng, 2)))
    jet.set_term((1, 2), fr.conjugate_pair(rand_scalar(rng, 1)))
    e = [rand_scalar(rng, 1, scale=0.5) for _ in range(4)]
    d1 = rand_scalar(rng, 1, scale=0.2)
    d2 = rand_scalar(rng, 1, scale=0.2)
    comp = jet.compose_affine(e[0], e[1], e[2], e[3], d1, d2)
    assert all(sum(m) <= 3 for m in comp.terms)
    # pointwise oracle at random y
    th = THETAS[:64]
    for v in (0.05 + 0.02j, -0.07j):
        y = np.empty((len(th), len(GRID), 2), complex)
        y[..., 0] = v
        y[..., 1] = 0.3 * np.conj(v)
        x = np.empty_like(y)
        x[..., 0] = (e[0].eval_theta(th) * y[..., 0]
                     + e[1].eval_theta(th) * y[..., 1] + d1.eval_theta(th))
        x[..., 1] = (e[2].eval_theta(th) * y[..., 0]
                     + e[3].eval_theta(th) * y[..., 1] + d2.eval_theta(th))
        lhs = comp.eval_at_points(y, th)
        rhs = jet.eval_at_points(x, th)
        assert np.abs(lhs - rhs).max() < 1e-13


def test_jet_degree_guard():
    jet = fr.PowerFourierSeries(2, GRID, fr.SCALAR, {})
    with pytest.raises(ValueError):
        jet.set_term((2, 1), fr.one(GRID))


# -- dumps -------------------------------------------------------------------------------


def test_coeff_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(18)
    f = rand_scalar(rng, 6, scale=math.pi)
    path = tmp_path / "f.dump"
    fr.write_coeff_dump(path, f)
    g = fr.read_coeff_dump(path, GRID)
    assert set(g.coeffs) == set(f.coeffs)
    for k in f.coeffs:
        assert np.array_equal(g.coeff(k), f.coeff(k))  # bit-exact contract
