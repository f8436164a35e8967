"""Closed-form collision kernels, interaction weights and quadrature oracles."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import AccuracyError, DomainError

DEFAULT_TOL = 1e-10
RESONANCE_TOL = 1e-12


def min_kernel_K(w1, w2, w3):
    """``min{sqrt(w1), sqrt(w2), sqrt((w1 + w2 - w3)_+), sqrt(w3)}``."""
    w = np.asarray([w1, w2, w3], dtype=float)
    if np.any(w < 0):
        raise DomainError("kernel arguments must be nonnegative")
    w4 = np.maximum(w[0] + w[1] - w[2], 0.0)
    out = np.sqrt(np.minimum(np.minimum(w[0], w[1]), np.minimum(w4, w[2])))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ResonantQuadruple:
    """Wave numbers with ``k1**2 + k2**2 == k3**2 + k4**2``."""

    k1: float
    k2: float
    k3: float
    k4: float

    def __post_init__(self):
        k = self.as_array()
        if np.any(k < 0):
            raise DomainError("wave numbers must be nonnegative")
        lhs, rhs = k[0] ** 2 + k[1] ** 2, k[2] ** 2 + k[3] ** 2
        if abs(lhs - rhs) > RESONANCE_TOL * max(1.0, lhs):
            raise DomainError(f"resonance violated: {lhs!r} != {rhs!r}")

    @classmethod
    def completing(cls, k1, k2, k3):
        """Solve the resonance condition for ``k4``."""
        d = k1 * k1 + k2 * k2 - k3 * k3
        if d < 0:
            raise DomainError("no nonnegative k4 completes this triple")
        return cls(k1, k2, k3, math.sqrt(d))

    def as_array(self):
        return np.array([self.k1, self.k2, self.k3, self.k4], dtype=float)


def resonant_quartic_closed(q: ResonantQuadruple) -> float:
    """``int_0^inf prod sin(k_i s) s**-2 ds = (pi/4) min k_i`` on resonance."""
    return math.pi / 4.0 * float(np.min(q.as_array()))


def resonant_quartic_sign_sum(q: ResonantQuadruple) -> float:
    """Same integral through the 16-term sum of ``|sum_l (+-k_l)|``.

    Each exponential ``exp(i w s) s**-2`` contributes ``-pi |w|`` on the whole
    line; halving gives the half-line value.  This path does not use the
    resonance condition except through the values themselves.
    """
    k = q.as_array()
    total = 0.0
    for signs in itertools.product((1.0, -1.0), repeat=4):
        s = np.array(signs)
        total -= np.prod(s) * abs(float(s @ k))
    return math.pi / 32.0 * total


def _cosine_frequencies(k):
    """Frequencies and weights with ``prod sin(k_l s) = sum_m a_m cos(w_m s)``."""
    a, b, c, d = k
    out = []
    for sab, wab in ((a - b, 1.0), (a + b, -1.0)):
        for scd, wcd in ((c - d, 1.0), (c + d, -1.0)):
            coeff = 0.125 * wab * wcd
            out.append((sab - scd, coeff))
            out.append((sab + scd, coeff))
    return out


def _fourier_tail(w, s0, tol):
    """``int_s0^inf cos(w s) s**-2 ds`` by QAWF.

    The cycle extrapolation can break down when the requested accuracy is
    near round-off, so looser targets are tried and the attempt with the
    smallest error estimate is kept.
    """
    best = (np.nan, np.inf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for eps in (0.01 * tol, 0.03 * tol, 0.1 * tol):
            part, perr = integrate.quad(lambda s: 1.0 / (s * s), s0, np.inf, weight="cos", wvar=w, epsabs=eps,
                                        limlst=200)
            if perr < best[1]:
                best = (part, perr)
            if perr <= eps:
                break
    return best


def resonant_quartic_quadrature(q: ResonantQuadruple, tol: float = DEFAULT_TOL) -> float:
    """Numerical value of ``int_0^inf prod sin(k_i s) s**-2 ds``.

    The regular part on ``[0, s0]`` (where the integrand behaves like
    ``k1 k2 k3 k4 s**2``) is integrated adaptively; the tail is expanded into
    cosines and each ``int_s0^inf cos(w s) s**-2 ds`` is evaluated by QUADPACK's
    Fourier-integral routine, which accelerates the oscillatory series.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    k = q.as_array()
    kmax = float(np.max(k))
    if kmax == 0.0 or float(np.min(k)) == 0.0:
        return 0.0
    s0 = 4.0 * math.pi / kmax

    def head(s):
        if s == 0.0:
            return 0.0
        return np.prod(np.sin(k * s)) / (s * s)

    val, err = integrate.quad(head, 0.0, s0, epsabs=0.1 * tol, epsrel=0.0, limit=400)
    total_err = err
    tail = 0.0
    for freq, coeff in _cosine_frequencies(k):
        w = abs(freq)
        if w < 1e-14 * kmax:
            tail += coeff / s0
            continue
        part, perr = _fourier_tail(w, s0, tol)
        tail += coeff * part
        total_err += abs(coeff) * perr
    result = val + tail
    if total_err > tol:
        raise AccuracyError("oscillatory quadrature did not converge", estimate=result, error=total_err)
    return float(result)


def angular_delta_kernel(k1, k2, k3, k) -> float:
    """Angular-averaged delta kernel ``8 k1 k2 k3 (4 pi / k) (pi/4) min{k1, k2, k3, k}``."""
    if k == 0:
        raise DomainError("the angular kernel is singular at k = 0")
    q = ResonantQuadruple(k1, k2, k3, k)
    return 8.0 * k1 * k2 * k3 * (4.0 * math.pi / k) * resonant_quartic_closed(q)


def collision_bracket(phi, x, y):
    """``phi(x + y) + phi(|x - y|) - 2 phi(max(x, y))``."""
    return phi(x + y) + phi(np.abs(x - y)) - 2.0 * phi(np.maximum(x, y))


def hinge_weight(z, x, y):
    """``[(x + y - z) ^ (z - |x - y|)]_+``, the second difference of ``(z - .)_+``.

    Symmetric in ``(x, y)``; for ``x > y`` it equals ``(y - |x - z|)_+``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.maximum(np.minimum(x + y - z, z - np.abs(x - y)), 0.0)
    return out if out.ndim else float(out)


def second_difference(psi, x, y):
    """``psi(x + y) + psi(x - y) - 2 psi(x)`` for ``x > y > 0``."""
    return psi(x + y) + psi(x - y) - 2.0 * psi(x)


def triple_interaction_weight(phi, w1, w2, w3) -> float:
    """``K(w1, w2, w3) / sqrt(w1 w2 w3) * (phi(w3) + phi(w1 + w2 - w3) - phi(w1) - phi(w2))``.

    Extended by continuity to the coordinate planes.  With two or more zero
    sizes (the axes) the limit is ``0``.  With exactly one zero size the factor
    ``K / sqrt(w_i)`` tends to ``1`` and the limit is generally nonzero.
    """
    if min(w1, w2, w3) < 0:
        raise DomainError("interaction weight needs nonnegative sizes")
    zeros = (w1 == 0) + (w2 == 0) + (w3 == 0)
    if zeros >= 2:
        return 0.0
    if zeros == 1:
        w4 = w1 + w2 - w3
        if w4 <= 0:
            return 0.0
        rest = [w for w in (w1, w2, w3) if w != 0]
        return (phi(w3) + phi(w4) - phi(w1) - phi(w2)) / math.sqrt(rest[0] * rest[1])
    K = min_kernel_K(w1, w2, w3)
    if K == 0.0:
        return 0.0
    w4 = w1 + w2 - w3
    return K / math.sqrt(w1 * w2 * w3) * (phi(w3) + phi(w4) - phi(w1) - phi(w2))


def dirac_family_value(omega, t):
    """``(1/t) (2/omega)**2 sin(omega t / 2)**2``, equal to ``t`` at ``omega = 0``."""
    if not t > 0:
        raise DomainError("t must be positive")
    om = np.asarray(omega, dtype=float)
    # t * sinc^2 form, so tiny omega neither overflows nor loses digits
    val = t * np.sinc(om * t / (2.0 * math.pi)) ** 2
    out = np.where(om == 0.0, float(t), val)
    return out if out.ndim else float(out)


def dirac_family_integral(t, psi=None, tol=1e-9):
    """``int_R dirac_family_value(omega, t) psi(omega) d omega`` by adaptive quadrature.

    Without ``psi`` the exact value is ``2 pi`` for every ``t``.  With ``psi``
    (smooth, integrable) the value tends to ``2 pi psi(0)``.
    """
    # Split at the first zeros of sin, so that quad resolves the main lobe.
    edge = 2.0 * math.pi / t
    if psi is None:
        core, e1 = integrate.quad(lambda w: dirac_family_value(w, t), 0.0, 50.0 * edge, limit=400,
                                  epsabs=0.1 * tol)
        # (2/(t w^2)) (1 - cos(w t)) on the tail
        a = 50.0 * edge
        smooth = 2.0 / (t * a)
        osc, e2 = integrate.quad(lambda w: 2.0 / (t * w * w), a, np.inf, weight="cos", wvar=t,
                                 epsabs=0.1 * tol)
        val = 2.0 * (core + smooth - osc)
        err = 2.0 * (e1 + e2)
    else:
        f = lambda w: dirac_family_value(w, t) * psi(w)
        a = 16.0 * edge
        val, err = 0.0, 0.0
        for sign in (1.0, -1.0):
            g = lambda w: psi(sign * w)
            for lo, hi in ((0.0, edge), (edge, 4 * edge), (4 * edge, a)):
                v, e = integrate.quad(lambda w: f(sign * w), lo, hi, limit=400, epsabs=0.1 * tol)
                val += v
                err += e
            # beyond a: (2/(t w^2)) (1 - cos(w t)) psi, oscillation handled by a cos weight
            v1, e1 = integrate.quad(lambda w: 2.0 * g(w) / (t * w * w), a, np.inf, limit=400, epsabs=0.1 * tol)
            v2, e2 = integrate.quad(lambda w: 2.0 * g(w) / (t * w * w), a, np.inf, weight="cos", wvar=t,
                                    epsabs=0.1 * tol)
            val += v1 - v2
            err += e1 + e2
    if err > 100 * tol:
        raise AccuracyError("Dirac-family quadrature did not converge", estimate=val, error=err)
    return float(val)


def pi2_over_6_check(z: float, tol: float = 1e-8) -> float:
    """``(1/z) iint (xy)**-1 [(x + y - z) ^ (z - |x - y|)]_+ dx dy`` over the support.

    The support is the strip ``x + y > z, |x - y| < z``; by symmetry only
    ``x > y`` is integrated, split at ``x = z`` and cut off far out where an
    explicit bound controls the remainder.  The exact value is ``pi**2 / 6``.
    """
    if not z > 0:
        raise DomainError("z must be positive")

    def inner(y, x):
        return hinge_weight(z, x, y) / (x * y)

    total, err = 0.0, 0.0
    far = 1e6 * z
    edges = [0.5 * z, z, 2 * z, 8 * z, 64 * z, 1e3 * z, 1e4 * z, 1e5 * z, far]
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.dblquad(inner, lo, hi, lambda x: abs(x - z), lambda x: x,
                                 epsabs=1e-3 * tol * z, epsrel=1e-13)
        total += v
        err += e
    # beyond `far` the weight is (y - x + z)_+ <= z on y in (x - z, x): integrand <= z^2 / (x (x - z))
    remainder = z * z / far
    value = 2.0 * total / z
    err = 2.0 * err / z
    # the remainder integrates to z/far * (1 + O(z/far)); add its leading part
    value += 2.0 * (remainder / z) * 0.5
    if err > tol:
        raise AccuracyError("pi^2/6 quadrature did not converge", estimate=value, error=err)
    return float(value)


def random_resonant_quadruples(n, seed=None, k_max=10.0):
    """``n`` quadruples with ``k1, k2, k3`` uniform on ``(0, k_max)`` and ``k4`` completing them."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        k1, k2, k3 = rng.uniform(0.0, k_max, 3)
        if k1 * k1 + k2 * k2 - k3 * k3 > 0:
            out.append(ResonantQuadruple.completing(k1, k2, k3))
    return out


@dataclass(frozen=True)
class OracleRow:
    name: str
    closed: float
    oracle: float

    @property
    def error(self):
        return abs(self.closed - self.oracle)


def oracle_suite(n=200, seed=0, z_values=(0.5, 1.0, 2.0, 10.0), tol=DEFAULT_TOL):
    """Closed forms against independent numerical values.

    Rows: the resonant quartic integral against oscillatory quadrature for
    ``n`` random quadruples, the same against the sign-sum evaluation, the
    ``pi**2/6`` identity at each ``z`` and the Dirac-family normalization.
    """
    rows = []
    for k, q in enumerate(random_resonant_quadruples(n, seed)):
        closed = resonant_quartic_closed(q)
        rows.append(OracleRow(f"quartic[{k}]", closed, resonant_quartic_quadrature(q, tol)))
        rows.append(OracleRow(f"quartic_signs[{k}]", closed, resonant_quartic_sign_sum(q)))
    for z in z_values:
        rows.append(OracleRow(f"pi2_over_6[z={z:g}]", math.pi**2 / 6.0, pi2_over_6_check(z)))
    for t in (1.0, 10.0):
        rows.append(OracleRow(f"dirac_norm[t={t:g}]", 2.0 * math.pi, dirac_family_integral(t)))
    return rows
