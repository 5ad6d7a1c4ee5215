"""The concrete skew-product map and its conjugation into matrix coordinates.

F(x, theta, lambda) = L(lambda) x + eps N(x, theta, lambda) with L a rigid
rotation by 2 pi lambda.  The Taylor split at x = 0 produces the constant,
linear and remainder data; the constant change of variables K = M^{-1} X
diagonalizes L and puts the linear part into the conjugate-pair matrix
class.  Invariance of a torus is measured directly: sup over a theta-grid
of |F(K(theta)) - K(theta + alpha)| per parameter value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fourier as fr
from .cfrac import ContinuedFraction
from .fourier import FourierSeries, PowerFourierSeries
from .reporting import CheckRow

SQRT2 = math.sqrt(2.0)

# K = M^{-1} X with M diagonalizing the rotation
M_MAT = np.array([[1.0, 1.0j], [1.0, -1.0j]]) / SQRT2
M_INV = np.array([[1.0, 1.0], [-1.0j, 1.0j]]) / SQRT2

PRESETS = ("constant_forcing", "generating", "nonsymplectic")


@dataclass
class SkewMapSpec:
    """eps, the x-jet of N (2-vector coefficients) and the rotation number."""

    eps: float
    N: PowerFourierSeries          # coefficients: 2-vector FourierSeries
    cf: ContinuedFraction
    lambda_grid: np.ndarray
    s_domain: float = 0.5
    preset: str = ""

    def rotation(self) -> np.ndarray:
        """L(lambda): (L, 2, 2) rotation matrices."""
        ang = 2 * np.pi * self.lambda_grid
        c, s = np.cos(ang), np.sin(ang)
        out = np.empty((len(self.lambda_grid), 2, 2))
        out[:, 0, 0] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        out[:, 1, 1] = c
        return out

    def eval_F(self, x: np.ndarray, thetas) -> np.ndarray:
        """F at pointwise x of shape (T, L, 2); complex output, real for
        real x by construction of the presets."""
        L = self.rotation()
        lin = np.einsum("lij,tlj->tli", L, x)
        pert = self.N.eval_at_points(x, thetas)
        return lin + self.eps * pert


@dataclass
class TorusApprox:
    """Reconstructed approximate invariant torus in matrix coordinates."""

    X: FourierSeries               # c2vector series; K = sqrt2 (Re X1, Im X1)
    level: int
    lambda_grid: np.ndarray

    def eval_K(self, thetas) -> np.ndarray:
        v = self.X.eval_theta(thetas)[..., 0]
        return np.stack([SQRT2 * v.real, SQRT2 * v.imag], axis=-1)

    def real_defect(self, active=None) -> float:
        return fr.c2_pair_defect(self.X, active)


# -- presets --------------------------------------------------------------------


def _cos_ser(grid, k=1, amp=1.0):
    return fr.from_modes(grid, fr.SCALAR, {k: amp / 2, -k: amp / 2})


def _sin_ser(grid, k=1, amp=1.0):
    return fr.from_modes(grid, fr.SCALAR, {k: -0.5j * amp, -k: 0.5j * amp})


def build_preset(name: str, eps: float, cf: ContinuedFraction, lambda_grid,
                 d_max: int = 6, s_domain: float = 0.5) -> SkewMapSpec:
    """Built-in perturbations; each is polynomial in x so the jet is exact."""
    grid = np.asarray(lambda_grid, float)
    jet = PowerFourierSeries(d_max, grid, fr.C2VECTOR, {})
    if name == "constant_forcing":
        jet.set_term((0, 0), fr.vector_from_scalars(_cos_ser(grid),
                                                    _sin_ser(grid)))
    elif name == "generating":
        # rotation composed with the exact-symplectic shear
        # (x, y) -> (x, y + eps (c0 + c1 x + c2 x^2)); N = L . (0, c_j)
        c0 = _cos_ser(grid) + _sin_ser(grid, k=2, amp=0.5)
        c1 = _cos_ser(grid, amp=0.5)
        c2 = _cos_ser(grid, amp=0.25) + _sin_ser(grid, amp=0.25)
        ang = 2 * np.pi * grid
        for m, c in (((0, 0), c0), ((1, 0), c1), ((2, 0), c2)):
            jet.set_term(m, fr.vector_from_scalars(
                c.scale(-np.sin(ang)), c.scale(np.cos(ang))))
    elif name == "nonsymplectic":
        jet.set_term((1, 0), fr.vector_from_scalars(_cos_ser(grid),
                                                    fr.zeros(grid)))
    else:
        raise ValueError("unknown preset %r (have %s)" % (name, PRESETS))
    return SkewMapSpec(eps=eps, N=jet, cf=cf, lambda_grid=grid,
                       s_domain=s_domain, preset=name)


# -- conjugation into matrix coordinates -------------------------------------------


@dataclass
class ConjugatedSystem:
    U: FourierSeries               # c2vector
    W: FourierSeries               # su11matrix
    R: PowerFourierSeries          # c2vector coefficients, degrees >= 2
    jet_drop_mass: float           # coefficient mass discarded beyond d_max
    rows: list = field(default_factory=list)


def conjugate_to_su11(spec: SkewMapSpec) -> ConjugatedSystem:
    """Taylor split V + S x + P at x = 0, then U = MV, W = M S M^{-1},
    R(X) = M P(M^{-1} X) as a jet with vanishing degree-<=1 part."""
    grid = spec.lambda_grid
    eps = spec.eps
    v_term = spec.N.term((0, 0))
    V1, V2 = v_term.component(0).scale(eps), v_term.component(1).scale(eps)
    U = fr.vector_from_scalars(
        (V1 + V2.scale(1j)).scale(1 / SQRT2),
        (V1 - V2.scale(1j)).scale(1 / SQRT2))

    sx = spec.N.term((1, 0))
    sy = spec.N.term((0, 1))
    S = fr.matrix_from_scalars(sx.component(0).scale(eps),
                               sy.component(0).scale(eps),
                               sx.component(1).scale(eps),
                               sy.component(1).scale(eps))
    Mm = fr.constant(grid, M_MAT, fr.SU11MATRIX)
    Mi = fr.constant(grid, M_INV, fr.SU11MATRIX)
    W = fr.multiply(fr.multiply(Mm, S), Mi)

    # remainder jet: degrees >= 2 of eps N, argument x = M^{-1} X
    P = PowerFourierSeries(spec.N.d_max, grid, fr.C2VECTOR, {})
    for m, f in spec.N.terms.items():
        if sum(m) >= 2:
            P.set_term(m, f.scale(eps))
    e11 = fr.constant(grid, M_INV[0, 0], fr.SCALAR)
    e12 = fr.constant(grid, M_INV[0, 1], fr.SCALAR)
    e21 = fr.constant(grid, M_INV[1, 0], fr.SCALAR)
    e22 = fr.constant(grid, M_INV[1, 1], fr.SCALAR)
    zero = fr.zeros(grid, fr.SCALAR)
    R = P.compose_affine(e11, e12, e21, e22, zero, zero)
    R = R.matrix_multiply_left(Mm).drop_low_degrees(2)

    rows = [CheckRow("R jet degree<=1 vanishes", 0.0, R.low_degree_mass(),
                     R.low_degree_mass() == 0.0)]
    return ConjugatedSystem(U=U, W=W, R=R, jet_drop_mass=0.0, rows=rows)


# -- area preservation ----------------------------------------------------------------


def check_area(spec: SkewMapSpec, n_theta: int = 24, n_x: int = 3,
               step: float = 1e-6, active=None) -> CheckRow:
    """Max |det dF/dx - 1| over an (x, theta, lambda) grid by central
    finite differences."""
    thetas = np.arange(n_theta) / n_theta
    L = len(spec.lambda_grid)
    xs = np.linspace(-0.3 * spec.s_domain, 0.3 * spec.s_domain, n_x)
    worst = 0.0
    for x1 in xs:
        for x2 in xs:
            base = np.broadcast_to(np.array([x1, x2]),
                                   (n_theta, L, 2)).astype(complex)
            jac = np.empty((n_theta, L, 2, 2), complex)
            for col in range(2):
                dx = np.zeros(2)
                dx[col] = step
                fp = spec.eval_F(base + dx, thetas)
                fm = spec.eval_F(base - dx, thetas)
                jac[..., col] = (fp - fm) / (2 * step)
            det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
            dev = np.abs(det - 1.0)
            if active is not None:
                dev = dev[:, active]
            worst = max(worst, float(dev.max()))
    return CheckRow("area |det dF - 1| on grid", 1e-8, worst, worst <= 1e-8,
                    spec.preset)


# -- invariance residual -----------------------------------------------------------------


def residual(spec: SkewMapSpec, torus: TorusApprox, n_theta: int = 4096,
             active=None) -> tuple:
    """Per-lambda sup of |F(K(theta)) - K(theta + alpha)|; the headline
    observable.  Returns (per-lambda array, rows)."""
    thetas = np.arange(n_theta) / n_theta
    K = torus.eval_K(thetas).astype(complex)
    FK = spec.eval_F(K, thetas)
    Kshift = TorusApprox(torus.X.shift(spec.cf.phase), torus.level,
                         torus.lambda_grid).eval_K(thetas)
    diff = FK - Kshift
    per_lambda = np.sqrt((np.abs(diff) ** 2).sum(axis=-1)).max(axis=0)
    rows = []
    kmax = float(np.sqrt((np.abs(K) ** 2).sum(axis=-1)).max()) if K.size else 0.0
    rows.append(CheckRow("torus stays in analyticity ball |K| < s",
                         spec.s_domain, kmax, kmax < spec.s_domain,
                         "warn-only"))
    return per_lambda, rows


def reconstruct_torus(factors, lambda_grid, level: Optional[int] = None) -> TorusApprox:
    """Push X = 0 through the factor list (X = E X' + Delta, right to left)."""
    grid = np.asarray(lambda_grid, float)
    X = fr.zeros(grid, fr.C2VECTOR)
    for f in reversed(list(factors)):
        X = fr.multiply(f.matrix, X) + f.offset
    return TorusApprox(X=X, level=len(list(factors)) if level is None else level,
                       lambda_grid=grid)
