import math

import numpy as np
import pytest

from kamtori import cfrac as cfr
from kamtori import fourier as fr
from kamtori import kam
from kamtori import model as md

GRID = np.linspace(0.25, 0.75, 7)
GM = cfr.golden_mean()
THETAS = np.arange(256) / 256.0
SQ2 = math.sqrt(2.0)


def empty_spec(eps=0.0):
    return md.SkewMapSpec(eps=eps,
                          N=fr.PowerFourierSeries(4, GRID, fr.C2VECTOR, {}),
                          cf=GM, lambda_grid=GRID)


def test_conjugate_zero_perturbation():
    conj = md.conjugate_to_su11(empty_spec())
    assert conj.U.is_zero() and conj.W.is_zero() and conj.R.is_zero()


def test_conjugate_constant_forcing():
    eps = 1e-8
    spec = md.build_preset("constant_forcing", eps, GM, GRID, d_max=4)
    conj = md.conjugate_to_su11(spec)
    # N = (cos, sin): U = (eps/sqrt2) (cos + i sin, conj)^T = e^{i2pi theta}
    u0 = conj.U.component(0)
    assert np.allclose(u0.coeff(1), eps / SQ2, rtol=1e-14)
    assert np.abs(u0.coeff(-1)).max() < 1e-22  # cos + i sin = e^{i2pi theta}
    assert conj.W.is_zero() and conj.R.is_zero()
    assert fr.c2_pair_defect(conj.U) < 1e-20


def test_conjugate_identity_linear_part():
    # S = eps I -> W display entries W1 = 2 eps, W2 = 0, matrix = eps I
    eps = 1e-3
    jet = fr.PowerFourierSeries(4, GRID, fr.C2VECTOR, {})
    jet.set_term((1, 0), fr.vector_from_scalars(fr.one(GRID), fr.zeros(GRID)))
    jet.set_term((0, 1), fr.vector_from_scalars(fr.zeros(GRID), fr.one(GRID)))
    spec = md.SkewMapSpec(eps=eps, N=jet, cf=GM, lambda_grid=GRID)
    conj = md.conjugate_to_su11(spec)
    m = conj.W.coeff(0)
    assert np.allclose(m[:, 0, 0], eps, rtol=1e-13)
    assert np.abs(m[:, 0, 1]).max() < 1e-18
    W1_display = 2 * m[0, 0, 0]
    assert W1_display == pytest.approx(2 * eps, rel=1e-13)


def test_conjugation_identity_pointwise():
    # MF(M^{-1} X) = A X + U + W X + R(X) on a grid, |x| < s/2
    rng = np.random.default_rng(30)
    spec = md.build_preset("generating", 1e-4, GM, GRID, d_max=4)
    conj = md.conjugate_to_su11(spec)
    A = np.exp(2j * np.pi * GRID)
    for _ in range(5):
        v = (rng.standard_normal() + 1j * rng.standard_normal()) * 0.1
        X = np.empty((len(THETAS), len(GRID), 2), complex)
        X[..., 0] = v
        X[..., 1] = np.conj(v)
        x = np.einsum("ij,tlj->tli", md.M_INV, X)
        lhs = np.einsum("ij,tlj->tli", md.M_MAT, spec.eval_F(x, THETAS))
        rhs = np.stack([A[None, :] * X[..., 0],
                        np.conj(A)[None, :] * X[..., 1]], axis=-1)
        rhs = rhs + conj.U.eval_theta(THETAS)
        rhs = rhs + np.einsum("tlij,tlj->tli", conj.W.eval_theta(THETAS), X)
        rhs = rhs + conj.R.eval_at_points(X, THETAS)
        assert np.abs(lhs - rhs).max() < 1e-10


def test_conjugate_R_jet_swap_symmetry():
    spec = md.build_preset("generating", 1e-4, GM, GRID, d_max=4)
    conj = md.conjugate_to_su11(spec)
    assert conj.R.low_degree_mass() == 0.0
    assert conj.R.conj_swap_defect() < 1e-18


def test_check_area_rotation():
    row = md.check_area(empty_spec())
    assert row.passed
    assert row.actual <= 1e-10


def test_check_area_generating():
    spec = md.build_preset("generating", 1e-6, GM, GRID, d_max=4)
    row = md.check_area(spec)
    assert row.passed
    assert row.actual <= 1e-8


def test_check_area_nonsymplectic_counterexample():
    eps = 1e-6
    spec = md.build_preset("nonsymplectic", eps, GM, GRID, d_max=4)
    row = md.check_area(spec)
    assert not row.passed
    assert 0.1 * eps <= row.actual <= 10 * eps  # |det - 1| ~ eps


def test_residual_zero_map_zero_torus():
    torus = md.reconstruct_torus([], GRID)
    res, rows = md.residual(empty_spec(), torus, n_theta=256)
    assert res.max() == 0.0


def test_residual_level0_equals_forcing_size():
    eps = 1e-8
    spec = md.build_preset("constant_forcing", eps, GM, GRID)
    torus = md.reconstruct_torus([], GRID)
    res, _ = md.residual(spec, torus, n_theta=512)
    assert res.max() == pytest.approx(eps, rel=1e-10)  # |N(0,theta)| = 1


def test_residual_lipschitz_in_noise():
    eps = 1e-8
    spec = md.build_preset("constant_forcing", eps, GM, GRID)
    base = md.reconstruct_torus([], GRID)
    res0, _ = md.residual(spec, base, n_theta=512)
    noise = 1e-6
    pert = fr.conjugate_pair(fr.constant(GRID, noise / SQ2))
    noisy = md.TorusApprox(base.X + pert, 0, GRID)
    res1, _ = md.residual(spec, noisy, n_theta=512)
    bump = res1.max() - res0.max()
    assert 0.05 * noise <= bump <= 20 * noise


def test_reconstruct_empty_and_constant_factor():
    t0 = md.reconstruct_torus([], GRID)
    assert t0.X.is_zero()
    c = 0.1 + 0.05j
    fac = kam.TransformFactor(fr.eye(GRID),
                              fr.conjugate_pair(fr.constant(GRID, c)))
    t1 = md.reconstruct_torus([fac], GRID)
    # K = M^{-1}(c, cbar)^T = sqrt2 (Re c, Im c)
    K = t1.eval_K(np.array([0.0, 0.3]))
    assert np.allclose(K[..., 0], SQ2 * c.real)
    assert np.allclose(K[..., 1], SQ2 * c.imag)
    assert t1.real_defect() < 1e-15


def test_reconstruct_invariant_under_zero_factor():
    rng = np.random.default_rng(31)
    d = fr.from_modes(GRID, fr.SCALAR,
                      {1: 0.1 * rng.standard_normal(), 0: 0.05})
    fac = kam.TransformFactor(fr.eye(GRID), fr.conjugate_pair(d))
    t1 = md.reconstruct_torus([fac], GRID)
    t2 = md.reconstruct_torus([fac, kam.TransformFactor.identity(GRID)], GRID)
    assert (t1.X - t2.X).sup_bound() <= 1e-12


def test_torus_stays_real_through_factors():
    rng = np.random.default_rng(32)
    d1 = fr.from_modes(GRID, fr.SCALAR, {1: 0.02 + 0.01j})
    E = fr.exp_su11(fr.off_diagonal(d1))
    off = fr.conjugate_pair(fr.from_modes(GRID, fr.SCALAR, {2: 0.05j}))
    factors = [kam.TransformFactor(E, off)]
    t = md.reconstruct_torus(factors, GRID)
    assert t.real_defect() < 1e-12
    K = t.eval_K(THETAS)
    assert np.abs(np.imag(K)).max() < 1e-12


def test_unknown_preset():
    with pytest.raises(ValueError):
        md.build_preset("nope", 1e-8, GM, GRID)
