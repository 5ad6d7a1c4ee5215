"""Cohomological equations with certified small divisors.

Pipeline for the variable-coefficient equation

    exp(2 pi i l (lambda + B)) delta + b delta - delta(. + alpha) = u :

kill the low modes of B through a difference equation (whose solution is a
trigonometric polynomial with an explicit exponential bound), then solve the
truncated conjugated equation as a diagonally dominant linear system, one
dense solve per active lambda-grid point.  Every bound the scheme relies on
(small divisors, truncation tails, solution size, Neumann dominance) is
re-measured and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import fourier as fr
from .cfrac import ContinuedFraction
from .fourier import FourierSeries, WeightedNormContext
from .reporting import CheckRow
from .weights import WeightFunction, eval_gamma

LAMBDA_DOMAIN = (0.25, 0.75)


class PreconditionError(RuntimeError):
    def __init__(self, rows):
        super().__init__("homological solver preconditions violated: "
                         + "; ".join(r.check for r in rows if not r.passed))
        self.rows = rows


class ConditioningError(RuntimeError):
    pass


class SingularityError(RuntimeError):
    pass


# -- unions of closed intervals -------------------------------------------------


@dataclass(frozen=True)
class IntervalUnion:
    intervals: tuple  # ((lo, hi), ...) sorted, disjoint, lo <= hi

    @staticmethod
    def full(lo: float = LAMBDA_DOMAIN[0], hi: float = LAMBDA_DOMAIN[1]) -> "IntervalUnion":
        return IntervalUnion(((float(lo), float(hi)),))

    @staticmethod
    def empty() -> "IntervalUnion":
        return IntervalUnion(())

    @staticmethod
    def from_list(pairs) -> "IntervalUnion":
        cleaned = sorted((float(a), float(b)) for a, b in pairs if b >= a)
        merged: list = []
        for a, b in cleaned:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return IntervalUnion(tuple((a, b) for a, b in merged))

    def measure(self) -> float:
        return sum(b - a for a, b in self.intervals)

    def is_empty(self) -> bool:
        return not self.intervals

    def subtract(self, zones: Iterable[tuple]) -> "IntervalUnion":
        """Remove open neighborhoods [lo, hi] from the union."""
        current = [list(p) for p in self.intervals]
        for zlo, zhi in zones:
            nxt = []
            for a, b in current:
                if zhi <= a or zlo >= b:
                    nxt.append([a, b])
                    continue
                if zlo > a:
                    nxt.append([a, min(zlo, b)])
                if zhi < b:
                    nxt.append([max(zhi, a), b])
            current = [iv for iv in nxt if iv[1] > iv[0]]
        return IntervalUnion(tuple((a, b) for a, b in current))

    def contains(self, x) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(x, float))
        mask = np.zeros(len(pts), bool)
        for a, b in self.intervals:
            mask |= (pts >= a) & (pts <= b)
        return mask


# -- resonance zones -------------------------------------------------------------


def resonance_zones(cf: ContinuedFraction, gamma: float, tau: float,
                    k_values: Iterable[int], domain: IntervalUnion,
                    lambda_grid: Optional[np.ndarray] = None,
                    shift: Optional[np.ndarray] = None,
                    ls=(1, 2)) -> tuple:
    """Zones where ||l (lambda + beta(lambda)) - k alpha|| < gamma/(|k|+l)^tau.

    k = 0 participates: the truncated system's zeroth divisor is
    exp(2 pi i l lambda~) - 1, which vanishes at lambda~ = 1/2 for l = 2.

    With beta = 0 the zones are closed-form intervals of half-width
    gamma / (l (|k|+l)^tau) around (k alpha + m)/l.  Otherwise the crossing
    is located on the tabulated grid and the half-width is inflated by the
    certified lower bound on the slope l (1 - max|beta'|).
    """
    zones = []
    rows: list = []
    if domain.is_empty():
        return zones, rows
    lo = min(a for a, _ in domain.intervals)
    hi = max(b for _, b in domain.intervals)
    use_shift = shift is not None and np.any(shift)
    max_dbeta = 0.0
    if use_shift:
        if lambda_grid is None or len(lambda_grid) != len(shift):
            raise ValueError("shift requires a matching lambda grid")
        if len(lambda_grid) >= 2:
            max_dbeta = float(np.abs(np.gradient(shift, lambda_grid)).max())
    for k in k_values:
        t = cf.frac_k(k) if k > 0 else (-cf.frac_k(-k) if k else 0.0)
        for l in ls:
            slope_lb = l * (1.0 - max_dbeta) if use_shift else float(l)
            if slope_lb < 0.5:
                rows.append(CheckRow("resonance slope >= 1/2", 0.5, slope_lb,
                                     False, "k=%d l=%d" % (k, l)))
                slope_lb = max(slope_lb, 1e-6)
            w = gamma / ((abs(k) + l) ** tau * slope_lb)
            if not use_shift:
                m_lo = math.ceil(l * (lo - w) - t)
                m_hi = math.floor(l * (hi + w) - t)
                for m in range(m_lo, m_hi + 1):
                    c = (t + m) / l
                    zones.append((c - w, c + w))
            else:
                h = l * (lambda_grid + shift) - t
                m_lo = math.ceil(h.min() - l * w)
                m_hi = math.floor(h.max() + l * w)
                for m in range(m_lo, m_hi + 1):
                    g = h - m
                    for i in range(len(g) - 1):
                        if g[i] == 0.0:
                            zones.append((lambda_grid[i] - w, lambda_grid[i] + w))
                        elif g[i] * g[i + 1] < 0:
                            c = lambda_grid[i] - g[i] * (
                                lambda_grid[i + 1] - lambda_grid[i]) / (g[i + 1] - g[i])
                            zones.append((c - w, c + w))
                    if g[-1] == 0.0:
                        zones.append((lambda_grid[-1] - w, lambda_grid[-1] + w))
    return zones, rows


# -- Diophantine sets --------------------------------------------------------------


@dataclass
class DcSet:
    """Parameters lambda with || l (lambda + shift) - k alpha || >= gamma/(|k|+l)^tau
    for 0 < |k| <= K, l = 1, 2, as a finite union of closed intervals."""

    cf: ContinuedFraction
    gamma: float
    tau: float
    K: int
    intervals: IntervalUnion
    lambda_grid: np.ndarray
    shift: np.ndarray  # [B]_theta per grid point (zeros when B = 0)

    def active_mask(self) -> np.ndarray:
        return self.intervals.contains(self.lambda_grid)

    def omega(self) -> np.ndarray:
        return self.lambda_grid + self.shift

    def certify(self, k_max: Optional[int] = None) -> list:
        """Sampled certification at every active grid point (k = 0 included)."""
        km = self.K if k_max is None else k_max
        mask = self.active_mask()
        om = self.omega()[mask]
        worst = math.inf
        where = ""
        for k in range(0, km + 1):
            t = self.cf.frac_k(k) if k else 0.0
            for sk, tt in ((k, t), (-k, -t)) if k else ((0, 0.0),):
                for l in (1, 2):
                    need = self.gamma / (abs(sk) + l) ** self.tau
                    d = l * om - tt
                    dist = np.abs(d - np.round(d))
                    margin = float((dist - need).min()) if dist.size else math.inf
                    if margin < worst:
                        worst = margin
                        where = "k=%d l=%d" % (sk, l)
        return [CheckRow("DC certification margin", 0.0,
                         -worst if math.isfinite(worst) else -math.inf,
                         bool(worst >= 0.0), where)]


def dc_from_exclusion(cf: ContinuedFraction, gamma: float, tau: float, K: int,
                      lambda_grid, domain: Optional[IntervalUnion] = None,
                      shift: Optional[np.ndarray] = None) -> DcSet:
    """Build the DC set by removing every resonance zone with 0 < |k| <= K."""
    grid = np.asarray(lambda_grid, float)
    dom = IntervalUnion.full() if domain is None else domain
    sh = np.zeros(len(grid)) if shift is None else np.asarray(shift, float)
    ks = [0] + [k for a in range(1, K + 1) for k in (a, -a)]
    zones, _ = resonance_zones(cf, gamma, tau, ks, dom, grid, sh)
    return DcSet(cf=cf, gamma=gamma, tau=tau, K=K,
                 intervals=dom.subtract(zones), lambda_grid=grid, shift=sh)


def certify_small_divisor(dc: DcSet, q_next: int, qbar_next: int,
                          k_max: Optional[int] = None) -> list:
    """|exp(2 pi i (l Omega - k alpha)) - 1| >= 4 gamma q_next^{-tau^2}
    over all active grid points, |k| <= sqrt(qbar_next), l = 1, 2."""
    K_lemma = math.isqrt(qbar_next)
    km = K_lemma if k_max is None else min(k_max, K_lemma)
    bound = 4.0 * dc.gamma * _float_pow(q_next, -dc.tau**2)
    mask = dc.intervals.contains(dc.lambda_grid)
    om = dc.omega()[mask]
    rows = []
    worst = math.inf
    where = ""
    for k in range(0, km + 1):
        t = dc.cf.frac_k(k) if k else 0.0
        for sk, tt in ((k, t), (-k, -t)) if k else ((0, 0.0),):
            for l in (1, 2):
                mags = np.abs(np.exp(2j * np.pi * (l * om - tt)) - 1.0)
                m = float(mags.min()) if mags.size else math.inf
                if m < worst:
                    worst = m
                    where = "k=%d l=%d" % (sk, l)
    case1 = _log_leq(qbar_next, q_next, 2 * dc.tau)
    rows.append(CheckRow("small divisor |e^{i2pi(lW-ka)}-1| >= 4g Q^{-tau^2}",
                         bound, worst, bool(worst >= bound),
                         where + (" case1" if case1 else " case2")))
    return rows


def _float_pow(q: int, expo: float) -> float:
    try:
        return float(q) ** expo
    except OverflowError:
        return math.inf if expo > 0 else 0.0


def _log_leq(a: int, b: int, expo: float) -> bool:
    """a <= b**expo via logs (big-int safe)."""
    from .weights import _ln_big
    return _ln_big(a) <= expo * _ln_big(b)


# -- the B-equation ------------------------------------------------------------------


def solve_b_equation(B: FourierSeries, qbar: int, cf: ContinuedFraction) -> FourierSeries:
    """Unique trigonometric-polynomial solution of

        Bcal(theta + alpha) - Bcal(theta) = -T_qbar B + [B]_theta

    with modes 0 < |k| < qbar.  The printed coefficient formula has the
    divisor sign flipped; the sign used here makes the equation hold with
    coefficient-exact residual, which is asserted.
    """
    if B.kind != fr.SCALAR:
        raise fr.KindMismatch("solve_b_equation needs a scalar series")
    scale = max(B.sup_bound(), 1e-300)
    if fr.real_defect(B) > 1e-12 * max(scale, 1.0):
        raise ValueError("B must be real-valued")
    coeffs = {}
    for k, v in B.coeffs.items():
        if k == 0 or abs(k) >= qbar:
            continue
        div = cf.phase(k) - 1.0
        if abs(div) < 1e-300:
            raise ZeroDivisionError("vanishing divisor at k=%d" % k)
        coeffs[k] = -v / div
    bcal = FourierSeries(B.lambda_grid, fr.SCALAR, coeffs)
    resid = bcal.shift(cf.phase) - bcal + B.truncate(qbar) \
        - fr.constant(B.lambda_grid, B.average(), fr.SCALAR)
    if resid.max_mode >= qbar and not resid.is_zero():
        raise AssertionError("truncation produced modes beyond qbar")
    if resid.sup_bound() > 1e-14 * max(scale, 1.0):
        raise AssertionError("B-equation residual %.3e above coefficient-exact "
                             "tolerance" % resid.sup_bound())
    return bcal


def b_equation_rows(B: FourierSeries, bcal: FourierSeries, qbar: int,
                    cf: ContinuedFraction, weight: WeightFunction, r: float,
                    rbar: float, r0: float, active=None) -> list:
    """Residual and exponential-growth certification for the B-equation."""
    ctx_r = WeightedNormContext(weight, r, active=active)
    ctx_rbar = WeightedNormContext(weight, rbar, active=active)
    resid = bcal.shift(cf.phase) - bcal + B.truncate(qbar) - \
        fr.constant(B.lambda_grid, B.average(), fr.SCALAR)
    rows = [CheckRow("B-equation coefficient residual", 1e-14,
                     resid.sup_bound(), resid.sup_bound() <= 1e-14
                     * max(1.0, B.sup_bound()))]
    eb = fr.exp_i_scalar(bcal, 1)
    lhs = fr.norm_r(eb, ctx_rbar)
    rhs = math.exp(min(8 * math.pi**2 * r0 * fr.norm_r(B, ctx_r), 700.0))
    rows.append(CheckRow("||e^{i2pi Bcal}||_rbar <= e^{8pi^2 r0 ||B||_r}",
                         rhs, lhs, lhs <= rhs))
    return rows


# -- truncation tails ------------------------------------------------------------------


def tail_bound(f: FourierSeries, K: int, r: float, sigma: float,
               ctx: WeightedNormContext) -> tuple:
    """Certified bound for || R_K f ||_{r - sigma}:

        exp(-sigma/r * Gamma(2 pi K (r-sigma)) ln(2 pi K (r-sigma))) ||f||_r.

    Returns (bound, actual, row); the inequality is asserted in the row.
    """
    if not 0 < sigma < r:
        raise ValueError("need 0 < sigma < r")
    x = 2 * math.pi * K * (r - sigma)
    if x <= 1.0:
        raise ValueError("2 pi K (r - sigma) must exceed 1 (Gamma domain)")
    decay = math.exp(max(-(sigma / r) * eval_gamma(ctx.weight, x) * math.log(x),
                         -745.0))
    bound = decay * fr.norm_r(f, ctx.with_r(r))
    actual = fr.norm_r(f.project_tail(K), ctx.with_r(r - sigma))
    row = CheckRow("tail ||R_K f||_{r-s} <= exp(-s Gamma ln / r)||f||_r",
                   bound * (1 + 1e-12), actual,
                   actual <= bound * (1 + 1e-12), "K=%d" % K)
    return bound, actual, row


# -- polar decomposition -----------------------------------------------------------------


def polar_decompose(G: FourierSeries, min_modulus: float = 0.5,
                    oversample: int = 4) -> tuple:
    """Real rho, B with (1 + rho) e^{2 pi i (lambda + B)} = e^{2 pi i lambda} + G.

    The argument is unwrapped continuously in theta from the principal
    branch at theta = 0 (zero winding for small G keeps B periodic), then
    rho and B are re-expanded on an oversampled theta-grid.  Returns
    (rho, B, pointwise reconstruction defect).
    """
    if G.kind != fr.SCALAR:
        raise fr.KindMismatch("polar_decompose needs a scalar series")
    grid = G.lambda_grid
    if G.is_zero():
        z = fr.zeros(grid, fr.SCALAR)
        return z, z, 0.0
    n = max(256, _next_pow2(oversample * (2 * G.max_mode + 1)))
    n = min(n, 1 << 14)
    thetas = np.arange(n) / n
    vals = G.eval_theta(thetas)  # (n, L)
    base = np.exp(2j * np.pi * grid)[None, :]
    z = base + vals
    mod = np.abs(z)
    if mod.min() <= min_modulus:
        raise SingularityError("e^{2 pi i lambda} + G approaches the origin "
                               "(min modulus %.3g)" % mod.min())
    rho_vals = mod - 1.0
    ang = np.unwrap(np.angle(z), axis=0) / (2 * np.pi)
    if np.any(np.abs(np.round(_loop_winding(z))) > 0):
        raise SingularityError("nonzero winding: perturbation too large")
    B_vals = ang - grid[None, :]
    B_vals = B_vals - np.round(B_vals[0])[None, :]
    rho = _series_from_grid(rho_vals, grid)
    Bs = _series_from_grid(B_vals, grid)
    recon = (1.0 + rho.eval_theta(thetas)) * np.exp(
        2j * np.pi * (grid[None, :] + Bs.eval_theta(thetas)))
    defect = float(np.abs(recon - z).max())
    return rho, Bs, defect


def _loop_winding(z: np.ndarray) -> np.ndarray:
    dang = np.angle(np.roll(z, -1, axis=0) / z)
    return dang.sum(axis=0) / (2 * np.pi)


def _next_pow2(n: int) -> int:
    return 1 << max(8, (n - 1).bit_length())


def _series_from_grid(vals: np.ndarray, lambda_grid: np.ndarray) -> FourierSeries:
    """Fourier coefficients of real grid data (theta along axis 0).

    The FFT leaves a flat roundoff floor ~ n*eps at every mode; modes past
    the point where the true exponential decay meets that floor are pure
    dust and are cut (weighted norms would otherwise amplify them
    astronomically).  The caller re-measures the reconstruction defect.
    """
    n = vals.shape[0]
    fhat = np.fft.fft(vals, axis=0) / n
    mag = np.abs(fhat).max(axis=1) if fhat.ndim > 1 else np.abs(fhat)
    gmax = float(mag.max())
    if gmax == 0.0:
        return fr.zeros(lambda_grid, fr.SCALAR)
    floor = 32.0 * n * 2.2e-16 * gmax
    by_absk = {}
    for idx in range(n):
        k = idx if idx <= n // 2 else idx - n
        if k == n // 2:
            continue  # unmatched Nyquist mode
        by_absk[abs(k)] = max(by_absk.get(abs(k), 0.0), float(mag[idx]))
    kcut = 0
    running = 0.0
    for a in sorted(by_absk, reverse=True):
        running = max(running, by_absk[a])
        if running >= floor:
            kcut = a + 1
            break
    coeffs = {}
    for idx in range(n):
        k = idx if idx <= n // 2 else idx - n
        if k == n // 2 or abs(k) >= max(kcut, 1):
            continue
        coeffs[k] = fhat[idx].astype(complex)
    if 0 not in coeffs and kcut >= 1:
        coeffs[0] = fhat[0].astype(complex)
    return fr._cleaned(lambda_grid, fr.SCALAR, coeffs)


# -- the truncated solver -------------------------------------------------------------------


@dataclass
class SolveSetup:
    """Level context for one homological solve."""

    cf: ContinuedFraction
    weight: WeightFunction
    gamma: float
    tau: float
    q_next: int          # Q_{n+1}
    qbar_n: int          # Qbar_n: B-equation truncation
    qbar_next: int       # Qbar_{n+1}: sets the lemma cutoff sqrt
    K: int               # system cutoff: modes |k| < K
    r_b: float           # width for the B hypotheses (= r_n)
    r_tilde: float
    sigma: float
    r0: float
    eps0: float
    active: Optional[np.ndarray] = None

    def ctx(self, r: float) -> WeightedNormContext:
        return WeightedNormContext(self.weight, float(r), active=self.active)


@dataclass
class SolveResult:
    delta: FourierSeries
    delta_er: FourierSeries
    delta_tilde: FourierSeries
    bcal: FourierSeries
    btilde: FourierSeries
    rows: list = field(default_factory=list)
    precondition_rows: list = field(default_factory=list)

    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)


def solve_homological(B: FourierSeries, b: FourierSeries, u: FourierSeries,
                      l: int, dc: DcSet, setup: SolveSetup,
                      force: bool = False) -> SolveResult:
    """Approximate solution of
        e^{2 pi i l (lambda + B)} delta + b delta - delta(theta+alpha) = u
    per the two-step pipeline; returns delta, the error term and every
    certified bound."""
    if l not in (1, 2):
        raise ValueError("l must be 1 or 2")
    grid = u.lambda_grid
    cf = setup.cf
    pre = _preconditions(B, b, dc, setup)
    if not all(r.passed for r in pre) and not force:
        raise PreconditionError(pre)

    bcal = solve_b_equation(B, setup.qbar_n, cf) if not B.is_zero() \
        else fr.zeros(grid, fr.SCALAR)
    e_plus = fr.exp_i_scalar(bcal, l)
    e_minus = fr.exp_i_scalar(bcal, -l)

    shift_avg = np.real(B.average())
    lam_t = grid + shift_avg
    exp_lt = fr.constant(grid, np.exp(2j * np.pi * l * lam_t), fr.SCALAR)

    # phi = e^{2 pi i l (-T_qbar B + [B])}; carries the conjugation of the shift
    mser = B.truncate(setup.qbar_n).scale(-1.0) + \
        fr.constant(grid, B.average(), fr.SCALAR)
    phi = fr.exp_i_scalar(mser, l)
    tail_B = B.project_tail(setup.qbar_n)
    e_tail = fr.exp_i_scalar(tail_B, l)
    btilde = fr.multiply(e_tail - fr.one(grid), exp_lt) + fr.multiply(b, phi)
    utt = fr.multiply(fr.multiply(e_plus, u), phi)

    rows = []
    phi_norm = fr.norm_r(phi, setup.ctx(setup.r_tilde))
    rows.append(CheckRow("||e^{i2pil(-T B + [B])}||_rt <= 2", 2.0, phi_norm,
                         phi_norm <= 2.0))

    # conditioning: measured Neumann dominance of the scaled system
    s_inv, pe_norm = _conditioning(btilde, lam_t, l, cf, setup)
    rows.append(CheckRow("||S^{-1}|| measured", math.inf, s_inv, True))
    dom = s_inv * pe_norm
    rows.append(CheckRow("||S^{-1} E P E^{-1}|| < 1/2", 0.5, dom, dom < 0.5,
                         gating=False))
    if dom >= 0.5 and not force:
        raise ConditioningError(
            "scaled perturbation %.3g >= 1/2 in row-sum norm" % dom)

    delta_tilde = _solve_truncated(btilde, utt, lam_t, l, cf, setup)

    # exact residual of the truncated linear system
    sys_res = (fr.multiply(exp_lt, delta_tilde)
               + fr.multiply(btilde, delta_tilde)
               - delta_tilde.shift(cf.phase) - utt).truncate(setup.K)
    u_scale = max(utt.sup_bound(setup.active), 1e-300)
    rows.append(CheckRow("truncated-system residual <= 1e-10 ||u||",
                         1e-10 * u_scale, sys_res.sup_bound(setup.active),
                         sys_res.sup_bound(setup.active) <= 1e-10 * u_scale))

    delta = fr.multiply(e_minus, delta_tilde)
    tail_part = (fr.multiply(btilde, delta_tilde) - utt).project_tail(setup.K)
    delta_er = fr.multiply(e_minus, tail_part)

    ctx_rt = setup.ctx(setup.r_tilde)
    u_norm = fr.norm_r(u, ctx_rt)
    sol_bound = 32.0 * setup.gamma**-2 * _float_pow(setup.q_next,
                                                    2 * setup.tau**2) * u_norm
    d_norm = fr.norm_r(delta, ctx_rt)
    rows.append(CheckRow("||delta|| <= 32 g^-2 Q^{2tau^2} ||u||", sol_bound,
                         d_norm, d_norm <= sol_bound))

    x = 2 * math.pi * setup.K * (setup.r_tilde - setup.sigma)
    if x > 1.0:
        decay = math.exp(max(-(setup.sigma / setup.r_tilde)
                             * eval_gamma(setup.weight, x) * math.log(x), -745.0))
        er_bound = 16.0 * decay * u_norm
        er_norm = fr.norm_r(delta_er, setup.ctx(setup.r_tilde - setup.sigma))
        rows.append(CheckRow("||delta_er||_{rt-s} <= 16 exp(-s G ln / rt)||u||",
                             er_bound, er_norm, er_norm <= er_bound))

    # residual of the full (untruncated) equation equals the transported tail
    full_res = (fr.multiply(fr.multiply(fr.lambda_phase(grid, l),
                                        fr.exp_i_scalar(B, l)), delta)
                + fr.multiply(b, delta) - delta.shift(cf.phase) - u)
    transported = fr.multiply(e_minus.shift(cf.phase), tail_part)
    mismatch = (full_res - transported).sup_bound(setup.active)
    rows.append(CheckRow("full residual = transported tail (1e-10 rel)",
                         1e-10 * u_scale, mismatch, mismatch <= 1e-10 * u_scale))

    return SolveResult(delta=delta, delta_er=delta_er, delta_tilde=delta_tilde,
                       bcal=bcal, btilde=btilde, rows=rows,
                       precondition_rows=pre)


def _preconditions(B, b, dc: DcSet, setup: SolveSetup) -> list:
    # theoretical-constant hypotheses: enforced by raising unless forced,
    # reported as non-gating rows either way
    rows = []
    ctx_rb = setup.ctx(setup.r_b)
    nB = fr.norm_r(B, ctx_rb)
    rows.append(CheckRow("||B||_r <= eps0^(1/3)", setup.eps0 ** (1 / 3), nB,
                         nB <= setup.eps0 ** (1 / 3), gating=False))
    tail = fr.norm_r(B.project_tail(setup.qbar_n), setup.ctx(setup.r_b / 2))
    tb = setup.gamma**2 / (480 * math.pi**2) * _float_pow(setup.q_next,
                                                          -2 * setup.tau**2)
    rows.append(CheckRow("||R_Qbar B||_{r/2} <= g^2/(480pi^2 Q^{2tau^2})", tb,
                         tail, tail <= tb, gating=False))
    nb = fr.norm_r(b, setup.ctx(setup.r_tilde))
    bb = setup.gamma**2 / 12.0 * _float_pow(setup.q_next, -2 * setup.tau**2)
    rows.append(CheckRow("||b||_rt < g^2/(12 Q^{2tau^2})", bb, nb,
                         nb < bb or (nb == 0.0 and bb == 0.0), gating=False))
    shift_dev = float(np.abs(np.real(B.average()) - dc.shift).max()) \
        if len(dc.shift) else 0.0
    rows.append(CheckRow("DC shift matches [B]_theta", 1e-10, shift_dev,
                         shift_dev <= 1e-10))
    return rows


def _conditioning(btilde: FourierSeries, lam_t: np.ndarray, l: int,
                  cf: ContinuedFraction, setup: SolveSetup) -> tuple:
    """Measured row-sum norms of S^{-1} and E P E^{-1}."""
    K = setup.K
    grid = btilde.lambda_grid
    mask = setup.active if setup.active is not None else np.ones(len(grid), bool)
    om = lam_t[mask]
    davg = 0.0
    if mask.sum() >= 2:
        davg = float(np.abs(np.gradient(lam_t[mask], grid[mask]) - 1.0).max())
    s_inv = 0.0
    for k in range(-K + 1, K):
        small = np.abs(np.exp(2j * np.pi * (l * om)) - cf.phase(k))
        if small.size == 0:
            continue
        val = (1.0 / small + 2 * math.pi * l * (1.0 + davg) / small**2).max()
        s_inv = max(s_inv, float(val))
    # row sums of the width-scaled convolution matrix
    ctx = setup.ctx(setup.r_tilde)
    cO = {d: fr._coeff_O(v, grid, ctx) for d, v in btilde.coeffs.items()}
    lw = {k: _log_weight(setup.weight, k, setup.r_tilde) for k in range(K)}
    pe = 0.0
    for k1 in range(-K + 1, K):
        tot = 0.0
        for k2 in range(-K + 1, K):
            c = cO.get(k1 - k2)
            if c:
                tot += c * math.exp(min(lw[abs(k1)] - lw[abs(k2)], 700.0))
        pe = max(pe, tot)
    return s_inv, pe


def _log_weight(weight: WeightFunction, k: int, r: float) -> float:
    from .weights import eval_lambda
    return eval_lambda(weight, 2 * math.pi * abs(k) * r)


def _solve_truncated(btilde: FourierSeries, utt: FourierSeries,
                     lam_t: np.ndarray, l: int, cf: ContinuedFraction,
                     setup: SolveSetup, chunk: int = 16) -> FourierSeries:
    """Dense partial-pivot solve of (S + P) F = U at each active grid point."""
    K = setup.K
    grid = utt.lambda_grid
    L = len(grid)
    mask = setup.active if setup.active is not None else np.ones(L, bool)
    ks = np.arange(-K + 1, K)
    n = len(ks)
    phases = np.array([cf.phase(int(k)) for k in ks])
    sdiag = np.exp(2j * np.pi * l * lam_t)[:, None] - phases[None, :]  # (L, n)
    rhs = np.zeros((L, n), complex)
    for i, k in enumerate(ks):
        v = utt.coeffs.get(int(k))
        if v is not None:
            rhs[:, i] = v
    sol = np.zeros((L, n), complex)
    idxs = np.nonzero(mask)[0]
    if btilde.is_zero():
        sol[idxs] = rhs[idxs] / sdiag[idxs]
    else:
        diffs = np.zeros((2 * n - 1, L), complex)
        for d, v in btilde.coeffs.items():
            if -n < d < n:
                diffs[d + n - 1] = v
        dmat_idx = (ks[:, None] - ks[None, :]) + n - 1  # (n, n)
        for start in range(0, len(idxs), chunk):
            sel = idxs[start:start + chunk]
            P = diffs[:, sel][dmat_idx]            # (n, n, m)
            M = np.moveaxis(P, 2, 0).copy()        # (m, n, n)
            M[:, np.arange(n), np.arange(n)] += sdiag[sel]
            sol[sel] = np.linalg.solve(M, rhs[sel][:, :, None])[:, :, 0]
    coeffs = {}
    for i, k in enumerate(ks):
        col = sol[:, i]
        if np.any(col):
            coeffs[int(k)] = col.copy()
    return fr._cleaned(grid, fr.SCALAR, coeffs)
