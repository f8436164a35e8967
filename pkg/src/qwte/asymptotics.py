"""Head and tail diagnostics of profiles, the mass sweep, and plot datasets."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .assembly import HingeAssembler
from .exceptions import AccuracyError, DomainError, FitError, QwteError
from .mesh import DensityProfile, Grid, rho_norm
from .sspe import check_rho, solve_profile

log = logging.getLogger(__name__)

HEAD_WINDOW_HI = 1e-2
TAIL_WINDOW = (8.0, 16.0)
PINNED_PREFACTOR = 8.0 / math.pi
# rate of the rho = 2 tail is close to RATE_TIMES_MASS / M
RATE_TIMES_MASS = 4.8
# keep rate * x_N below this so the last coefficients stay far above underflow
MAX_TAIL_EXPONENT = 440.0


def predicted_head_amplitude(rho, mass):
    """``sqrt((6 / pi**2) (2 / rho) (rho - 1) mass)``."""
    rho = check_rho(rho)
    if not mass > 0:
        raise DomainError("mass must be positive")
    return math.sqrt(6.0 / math.pi**2 * (2.0 / rho) * (rho - 1.0) * mass)


def _window_values(profile, lo, hi, closed_lo, minimum):
    x = profile.nodes
    sel = ((x >= lo) if closed_lo else (x > lo)) & (x <= hi * (1 + 1e-12))
    z = x[sel]
    if z.size < minimum:
        raise FitError(f"only {z.size} nodes in window ({lo:.4g}, {hi:.4g}]; need {minimum}")
    phi = profile.evaluate(z)
    if np.any(phi <= 0):
        raise FitError("profile vanishes inside the fit window")
    return z, phi


def _r_squared(y, fitted):
    ss = float(np.sum((y - np.mean(y)) ** 2))
    if ss == 0.0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - np.sum((y - fitted) ** 2) / ss)))


# head -------------------------------------------------------------------------------

@dataclass(frozen=True)
class HeadFitReport:
    """Free power fit and the fit pinned to exponent ``-1/2``.

    ``relative_deviation`` compares the pinned amplitude with the prediction.
    """

    amplitude: float
    exponent: float
    free_amplitude: float
    predicted: float
    window: tuple
    relative_deviation: float
    n_points: int


def default_head_window(grid):
    return (2.0 * grid.nodes[0], HEAD_WINDOW_HI)


def fit_head(profile: DensityProfile, window=None, rho=2.0, mass=None) -> HeadFitReport:
    """Fit ``Phi ~ A z**p`` on the head window.

    Parameters
    ----------
    window : (float, float), optional
        Closed window, by default ``[2 x_1, 1e-2]``; must lie in ``(0, 0.1 x_N)``.
    mass : float, optional
        Mass entering the predicted amplitude; defaults to ``mass(Phi)``.
    """
    lo, hi = default_head_window(profile.grid) if window is None else map(float, window)
    if not (0 < lo < hi <= 0.1 * profile.nodes[-1]):
        raise FitError("head window must lie inside (0, 0.1 x_N)")
    z, phi = _window_values(profile, lo, hi, True, 10)
    lz, lp = np.log(z), np.log(phi)
    p, logA = np.polyfit(lz, lp, 1)
    if not np.isfinite(p):
        raise FitError("head exponent is not finite")
    amp = float(np.exp(np.mean(lp + 0.5 * lz)))
    m = profile.mass() if mass is None else float(mass)
    pred = predicted_head_amplitude(rho, m)
    return HeadFitReport(amp, float(p), float(np.exp(logA)), pred, (lo, hi), abs(amp / pred - 1.0), int(z.size))


# tails ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class TailFitReport:
    """Tail fit ``C z**alpha exp(-a z)`` (``kind="exponential"``) or ``C z**alpha`` (``"power"``).

    ``residual`` holds ``(z, model / Phi - 1)`` of the pinned model on the window
    nodes, ``pinned_deviation`` its largest modulus.
    """

    kind: str
    rate: float
    prefactor: float
    power: float
    r2: float
    window: tuple
    n_points: int
    pinned_rate: float = float("nan")
    pinned_prefactor: float = float("nan")
    pinned_deviation: float = float("nan")
    predicted_prefactor: float = float("nan")
    prefactor_deviation: float = float("nan")
    residual: tuple = field(default=(), repr=False)

    def model(self, z, pinned=False):
        z = np.asarray(z, dtype=float)
        if self.kind == "exponential":
            if pinned:
                return self.pinned_prefactor * z * np.exp(-self.pinned_rate * z)
            return self.prefactor * z**self.power * np.exp(-self.rate * z)
        C = self.pinned_prefactor if pinned else self.prefactor
        p = -self.pinned_rate if pinned else self.power
        return C * z**p


def _pinned_rate(z, lp):
    """Least squares of ``log((8/pi) a z) - a z`` against ``log Phi`` in ``a``."""

    def grad(a):
        r = np.log(PINNED_PREFACTOR * a * z) - a * z - lp
        return float(np.sum(r * (1.0 / a - z)))

    # (1/a - z) < 0 throughout once a > 1/z_min, the objective is unimodal there
    lo, hi = 1e-8 / z[-1], 1e8 / z[0]
    grid = np.geomspace(lo, hi, 400)
    vals = np.array([np.sum((np.log(PINNED_PREFACTOR * a * z) - a * z - lp) ** 2) for a in grid])
    k = int(np.argmin(vals))
    a_lo, a_hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if grad(a_lo) * grad(a_hi) < 0:
        return float(optimize.brentq(grad, a_lo, a_hi, xtol=1e-15, rtol=1e-15, maxiter=200))
    return float(grid[k])


def fit_tail_exponential(profile: DensityProfile, window=TAIL_WINDOW) -> TailFitReport:
    """Free fit of ``log C + alpha log z - a z`` and the pinned fit ``(8/pi) a z e^{-a z}``.

    The window is half-open ``(lo, hi]`` and needs at least 6 nodes.
    """
    lo, hi = map(float, window)
    if not 0 < lo < hi or hi > profile.nodes[-1] * (1 + 1e-12):
        raise FitError("tail window must lie inside the grid")
    z, phi = _window_values(profile, lo, hi, False, 6)
    lp = np.log(phi)
    A = np.column_stack([np.ones_like(z), np.log(z), -z])
    sol = np.linalg.lstsq(A, lp, rcond=None)[0]
    r2 = _r_squared(lp, A @ sol)
    a_pin = _pinned_rate(z, lp)
    model = PINNED_PREFACTOR * a_pin * z * np.exp(-a_pin * z)
    rel = model / phi - 1.0
    return TailFitReport(
        "exponential", float(sol[2]), float(np.exp(sol[0])), float(sol[1]), r2, (lo, hi), int(z.size),
        pinned_rate=a_pin, pinned_prefactor=PINNED_PREFACTOR * a_pin, pinned_deviation=float(np.max(np.abs(rel))),
        residual=(z, rel),
    )


def fit_tail_powerlaw(profile: DensityProfile, rho, window=None) -> TailFitReport:
    """Slope of ``log Phi`` against ``log z`` and the prefactor at slope ``-rho``.

    The prefactor is compared with ``(2 - rho)(rho - 1) ||Phi||_rho`` where the
    supremum is taken over ``R <= x_N`` only, so that it is not implied by the
    tail closure.  The default window is the last decade of the grid.
    """
    rho = check_rho(rho)
    if rho == 2.0:
        raise DomainError("the power-law tail fit needs rho < 2")
    xN = profile.nodes[-1]
    lo, hi = (xN / 10.0, xN) if window is None else map(float, window)
    if not 0 < lo < hi or hi > xN * (1 + 1e-12):
        raise FitError("tail window must lie inside the grid")
    z, phi = _window_values(profile, lo, hi, True, 6)
    lz, lp = np.log(z), np.log(phi)
    slope, logC = np.polyfit(lz, lp, 1)
    r2 = _r_squared(lp, slope * lz + logC)
    C_pin = float(np.exp(np.mean(lp + rho * lz)))
    norm = resolved_rho_norm(profile, rho)
    pred = (2.0 - rho) * (rho - 1.0) * norm
    rel = C_pin * z**-rho / phi - 1.0
    return TailFitReport(
        "power", 0.0, float(np.exp(logC)), float(slope), r2, (lo, hi), int(z.size),
        pinned_rate=rho, pinned_prefactor=C_pin, pinned_deviation=float(np.max(np.abs(rel))),
        predicted_prefactor=pred, prefactor_deviation=abs(C_pin / pred - 1.0), residual=(z, rel),
    )


def resolved_rho_norm(profile, rho, samples=2000):
    """``sup_{R <= x_N} R**(rho - 2) int (x ^ R) Phi dx`` (grid-resolved part of the norm)."""
    xs = profile.nodes
    R = np.unique(np.concatenate([np.geomspace(xs[0] * 1e-2, xs[-1], samples), xs]))
    vals = R ** (rho - 2.0) * profile.truncated_energy(R)
    return float(np.max(vals))


# rescaled head functional ------------------------------------------------------------

def rescaled_head_functional(profile: DensityProfile, lam, z, order=8):
    """``iint f(x) f(y) w_z(x, y) dx dy`` with ``f(x) = lam Phi(lam x) / sqrt(lam x)``.

    Substituting ``x -> x / lam`` and using that the hinge weight is
    homogeneous of degree one gives ``(2 / lam) c^T Q_{lam z} c``, with ``Q``
    the ordered hinge form of the profile's basis.
    """
    lam = float(lam)
    z = float(z)
    if not (lam > 0 and z > 0):
        raise DomainError("lambda and z must be positive")
    asm = HingeAssembler(profile.grid, profile.basis, profile.tail, order)
    c = profile.coeffs
    val = 2.0 / lam * float(c @ asm.symmetric_form(lam * z) @ c)
    if not np.isfinite(val):
        raise AccuracyError("hinge form evaluation is not finite", estimate=val, error=np.inf)
    return val


# mass sweep ------------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepEntry:
    mass: float
    rate: float
    free_rate: float
    free_power: float
    r2: float
    pinned_deviation: float
    iterations: int
    residual: float
    n_nodes: int

    @property
    def inverse_rate(self):
        return 1.0 / self.rate

    @property
    def rate_times_mass(self):
        return self.rate * self.mass


@dataclass
class SweepReport:
    """Pinned decay rates per target mass and the regression of ``1/a`` on ``M``.

    ``failures`` lists ``(mass, message)`` of members whose solve or fit failed;
    the regression uses the remaining members.
    """

    entries: list
    slope: float
    intercept: float
    r2: float
    failures: list = field(default_factory=list)

    @property
    def complete(self):
        return not self.failures

    @property
    def masses(self):
        return np.array([e.mass for e in self.entries])

    @property
    def inverse_rates(self):
        return np.array([e.inverse_rate for e in self.entries])

    def rate_mass_spread(self):
        """``max |a M / mean(a M) - 1|`` over the members."""
        am = np.array([e.rate_times_mass for e in self.entries])
        return float(np.max(np.abs(am / am.mean() - 1.0)))

    def normalization_factor(self, reference):
        """Single factor ``k`` minimizing the squared log error of ``k / a`` against ``reference``.

        ``reference`` maps masses to values of ``1/a``; the member masses
        must include every key.
        """
        ours = {e.mass: e.inverse_rate for e in self.entries}
        logs = [math.log(v / ours[m]) for m, v in reference.items()]
        return float(math.exp(np.mean(logs)))

    def spot_errors(self, reference, factor=1.0):
        ours = {e.mass: e.inverse_rate for e in self.entries}
        return {m: abs(factor * ours[m] / v - 1.0) for m, v in reference.items()}

    def regression_line(self, M):
        return self.slope * np.asarray(M, dtype=float) + self.intercept


def sweep_grid(mass, n_nodes=200, x_max=40.0, per_octave=10, window_hi=TAIL_WINDOW[1]):
    """Default dyadic grid cut at ``min(x_max, max(1.25 window_hi, 91 M))``.

    The cut keeps ``a x_N`` (with ``a`` about ``4.8 / M``) below underflow
    while leaving the fit window resolved.
    """
    X = Grid.dyadic(x_max, n_nodes, per_octave).nodes
    xN = min(x_max, max(1.25 * window_hi, MAX_TAIL_EXPONENT / RATE_TIMES_MASS * mass))
    return Grid(X[X <= xN * (1 + 1e-12)])


def _sweep_member(args):
    mass, grid, window = args
    try:
        prof, rep = solve_profile(mass, 2.0, grid)
        fit = fit_tail_exponential(prof, window)
    except QwteError as exc:
        return mass, None, f"{type(exc).__name__}: {exc}"
    return mass, SweepEntry(mass, fit.pinned_rate, fit.rate, fit.power, fit.r2, fit.pinned_deviation,
                            rep.total_iterations, rep.residual_inf, len(grid)), None


def mass_sweep(masses, rho=2.0, window=TAIL_WINDOW, n_nodes=200, x_max=40.0, per_octave=10, workers=1,
               grids=None) -> SweepReport:
    """Solve the ``rho = 2`` profile per mass, fit the pinned rate, and regress ``1/a`` on ``M``.

    Parameters
    ----------
    workers : int
        Process-pool size; ``1`` runs serially.  Results are ordered by mass.
    grids : sequence of Grid, optional
        Override the per-mass grids from :func:`sweep_grid`.
    """
    if check_rho(rho) != 2.0:
        raise DomainError("the exponential-tail sweep is defined for rho = 2")
    masses = [float(m) for m in masses]
    if not masses or any(m <= 0 for m in masses) or any(b <= a for a, b in zip(masses, masses[1:])):
        raise DomainError("masses must be positive and strictly increasing")
    if grids is None:
        grids = [sweep_grid(m, n_nodes, x_max, per_octave, window[1]) for m in masses]
    jobs = [(m, g, tuple(window)) for m, g in zip(masses, grids)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            out = list(pool.map(_sweep_member, jobs))
    else:
        out = [_sweep_member(j) for j in jobs]
    entries = [e for _, e, _ in out if e is not None]
    failures = [(m, msg) for m, e, msg in out if e is None]
    for m, msg in failures:
        log.warning("sweep member M=%g failed: %s", m, msg)
    if len(entries) >= 2:
        res = stats.linregress([e.mass for e in entries], [e.inverse_rate for e in entries])
        slope, icpt, r2 = float(res.slope), float(res.intercept), float(res.rvalue**2)
    else:
        slope = icpt = r2 = float("nan")
    return SweepReport(entries, slope, icpt, r2, failures)


# estimators ---------------------------------------------------------------------------------

def _positive_column(X):
    x = check_array(np.asarray(X, dtype=float).reshape(-1, 1), ensure_all_finite=True).ravel()
    if np.any(x <= 0):
        raise DomainError("sizes must be positive")
    return x


class HeadFit(BaseEstimator):
    """Estimator form of :func:`fit_head`; ``fit`` takes a :class:`DensityProfile`.

    Attributes
    ----------
    report_ : HeadFitReport
    amplitude_, exponent_ : float
    """

    def __init__(self, window=None, rho=2.0, mass=None):
        self.window = window
        self.rho = rho
        self.mass = mass

    def fit(self, X, y=None):
        if not isinstance(X, DensityProfile):
            raise DomainError("HeadFit.fit expects a DensityProfile")
        self.report_ = fit_head(X, self.window, self.rho, self.mass)
        self.amplitude_ = self.report_.amplitude
        self.exponent_ = self.report_.exponent
        return self

    def predict(self, X):
        """Pinned model ``A z**-0.5``."""
        check_is_fitted(self, "report_")
        return self.amplitude_ / np.sqrt(_positive_column(X))


class TailFit(BaseEstimator):
    """Estimator form of the tail fits.

    Parameters
    ----------
    kind : {"exponential", "power"}
    window : (float, float), optional
    rho : float
        Used by the power-law fit.
    """

    def __init__(self, kind="exponential", window=None, rho=2.0):
        self.kind = kind
        self.window = window
        self.rho = rho

    def fit(self, X, y=None):
        if not isinstance(X, DensityProfile):
            raise DomainError("TailFit.fit expects a DensityProfile")
        if self.kind == "exponential":
            self.report_ = fit_tail_exponential(X, TAIL_WINDOW if self.window is None else self.window)
        elif self.kind == "power":
            self.report_ = fit_tail_powerlaw(X, self.rho, self.window)
        else:
            raise DomainError(f"unknown tail kind {self.kind!r}")
        return self

    def predict(self, X, pinned=False):
        check_is_fitted(self, "report_")
        return self.report_.model(_positive_column(X), pinned=pinned)


# plot datasets -----------------------------------------------------------------------------------

def power_tail_rows(profile, rho, fit=None):
    """``(z, Phi, C z**-rho)`` on the grid nodes; ``C`` from the pinned power fit."""
    fit = fit or fit_tail_powerlaw(profile, rho)
    z = profile.nodes
    return ["z", "phi", "model"], np.column_stack([z, profile.evaluate(z), fit.model(z, pinned=True)])


def exponential_tail_rows(profile, fit=None):
    """``(z, Phi, free model, pinned model)`` on the grid nodes."""
    fit = fit or fit_tail_exponential(profile)
    z = profile.nodes
    return (["z", "phi", "free_model", "pinned_model"],
            np.column_stack([z, profile.evaluate(z), fit.model(z), fit.model(z, pinned=True)]))


def sweep_rows(report: SweepReport):
    """``(M, 1/a, regression line)`` per sweep member."""
    M = report.masses
    return ["M", "inverse_rate", "regression"], np.column_stack([M, report.inverse_rates, report.regression_line(M)])
