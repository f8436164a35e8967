"""Galerkin discretization and bordered Newton solver for the profile equation.

Profiles ``Phi`` with scaling exponent ``rho`` are characterised weakly by

    (1/rho) int (x psi'(x) - (rho - 1)(psi(x) - psi(0))) Phi(x) dx
        = iint_{x > y} Phi(x) Phi(y) (x y)**-0.5 D2_y psi(x) dx dy,

tested here with the hinges ``psi_n(x) = (x_n - x)_+`` at every grid node.
Both sides are assembled once (linear matrix ``L`` and quadratic tensor
``T``); Newton then only needs dense contractions.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .assembly import HingeAssembler
from .exceptions import DegeneracyError, DivergenceError, DomainError, RangeError
from .mesh import DensityProfile, Grid, TailClosure, _basis_exponent as _sigma, default_grid, rho_norm

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
RHO_STEP = 0.02
MAX_HALVINGS = 20
# decay rate (times the mass) of the first-stage initial guess
INITIAL_DECAY = 3.0


def check_rho(rho):
    rho = float(rho)
    if not 1.0 < rho <= 2.0:
        raise DomainError(f"rho={rho} outside (1, 2]")
    return rho


@dataclass(frozen=True, eq=False)
class SspeProblem:
    """Discretized profile equation: exponent, target mass, grid, basis and tail."""

    rho: float
    mass: float
    grid: Grid = field(default_factory=default_grid)
    basis: str = "sqrt"
    tail: TailClosure = field(default_factory=TailClosure)
    order: int = 8

    def __post_init__(self):
        object.__setattr__(self, "rho", check_rho(self.rho))
        if not self.mass > 0:
            raise DomainError("target mass must be positive")

    def with_tail(self, tail):
        return SspeProblem(self.rho, self.mass, self.grid, self.basis, tail, self.order)

    def profile(self, coeffs):
        return DensityProfile(self.grid, coeffs, self.basis, self.tail)


def linear_matrix(grid, basis, tail, rho, z=None):
    """``L[n, i] = (1/rho) [(rho-2) int_0^{z_n} x b_i + (rho-1) z_n int_{z_n}^inf b_i]``."""
    z = grid.nodes if z is None else np.asarray(z, dtype=float)
    zero = DensityProfile(grid, np.zeros(len(grid)), basis, tail)
    inner = zero.moment_matrix(1, 0.0, z)
    outer = zero.moment_matrix(0, z, np.inf)
    if not np.all(np.isfinite(outer)):
        raise RangeError("tail closure carries infinite mass")
    return ((rho - 2.0) * inner + (rho - 1.0) * z[:, None] * outer) / rho


def linear_functional(n, profile, rho):
    """Weak left side for the hinge at node ``n`` applied to ``profile``."""
    L = linear_matrix(profile.grid, profile.basis, profile.tail, check_rho(rho), profile.nodes[n : n + 1])
    return float(L[0] @ profile.coeffs)


@dataclass(frozen=True, eq=False)
class AssemblyTensors:
    """Linear matrix ``L`` (P x N) and symmetric quadratic tensor ``T`` (P x N x N)."""

    L: np.ndarray
    T: np.ndarray

    def quadratic(self, c):
        """``Q_n(c) = sum_ij c_i c_j T[n, i, j]``."""
        return (self.T @ c) @ c

    def residual(self, c):
        return self.quadratic(c) - self.L @ c

    def jacobian(self, c):
        return 2.0 * (self.T @ c) - self.L

    def scales(self, c):
        """Magnitude of the two sides per row; used to equilibrate rows."""
        return np.abs(self.L) @ np.abs(c) + np.abs(self.quadratic(c))


def assemble(problem: SspeProblem) -> AssemblyTensors:
    """Assemble ``L`` and ``T`` on the problem grid (hinges at every node)."""
    t0 = time.perf_counter()
    asm = HingeAssembler(problem.grid, problem.basis, problem.tail, problem.order)
    T = asm.tensor()
    L = linear_matrix(problem.grid, problem.basis, problem.tail, problem.rho)
    if not (np.all(np.isfinite(T)) and np.all(np.isfinite(L))):
        bad = np.argwhere(~np.isfinite(T))
        raise RangeError(f"non-finite assembly entry at (n, i, j) = {tuple(bad[0]) if bad.size else '?'}")
    log.debug("assembled N=%d in %.2fs", len(problem.grid), time.perf_counter() - t0)
    return AssemblyTensors(L, T)


def residual(tensors: AssemblyTensors, coeffs):
    """Weak residual ``F_n = sum c_i c_j T[n,i,j] - sum L[n,i] c_i``."""
    return tensors.residual(np.asarray(coeffs, dtype=float))


@dataclass
class NewtonReport:
    """Diagnostics of a bordered Newton solve.

    ``residual_inf`` is the unscaled weak residual ``max |F_n + mu delta_nN|``;
    ``scaled_residual_inf`` divides each row by the size of its two sides.
    ``stages`` holds the reports of earlier domain-marching stages.
    """

    converged: bool
    iterations: int
    residual_inf: float
    scaled_residual_inf: float
    mass_residual: float
    multiplier: float
    damping: list = field(default_factory=list)
    projection_active: bool = False
    rank_deficiency: int = 0
    min_coefficient: float = float("nan")
    seconds: float = 0.0
    stages: list = field(default_factory=list)

    @property
    def total_iterations(self):
        return self.iterations + sum(s.iterations for s in self.stages)

    def as_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if k == "stages":
                v = [s.as_dict() for s in v]
            elif isinstance(v, np.generic):
                v = v.item()
            out[k] = v
        return out


def initial_guess(problem: SspeProblem, decay=1.0):
    """``A x**-0.5 exp(-decay x)`` interpolated, with ``A`` chosen for the target mass."""
    prof = DensityProfile.from_function(lambda x: x**-0.5 * np.exp(-decay * x), problem.grid, problem.basis,
                                        problem.tail)
    return prof.scaled(problem.mass / prof.mass())


def _as_coeffs(problem, initial):
    c = np.array(initial.coeffs if isinstance(initial, DensityProfile) else initial, dtype=float)
    if c.shape != (len(problem.grid),):
        raise DomainError("initial guess does not match the grid")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise DomainError("initial guess must be finite and nonnegative")
    if np.any(c == 0):
        # multiplicative updates cannot leave zero; start from a tiny floor instead
        c = np.where(c > 0, c, np.min(c[c > 0]) * 1e-3 if np.any(c > 0) else 1.0)
    return c


def newton_solve(problem: SspeProblem, initial=None, tensors=None, tol=NEWTON_TOL, max_iter=30,
                 abs_tol=1e-8, rcond=1e-10):
    """Solve ``{F(c) + mu e_N = 0, mass(c) = M}`` by damped Newton.

    Coefficients are updated multiplicatively, ``c <- c exp(lambda dy)``, so they
    stay positive without projection.  Rows are divided by the size of their
    two sides, which resolves the exponentially small tail rows to relative
    accuracy.  The multiplier ``mu`` on the last test row borders the
    near-null direction of the dilation ``x -> c x``.  Each step is the
    minimum-norm least-squares solution with singular values below
    ``rcond * s_max`` discarded; ``rank_deficiency`` in the report counts them.

    Parameters
    ----------
    problem : SspeProblem
    initial : DensityProfile or array, optional
        Starting profile (default :func:`initial_guess`); nonnegative, mass
        within 50 % of the target.
    tensors : AssemblyTensors, optional
        Reuse a previous assembly.
    tol : float
        Target for the row-scaled residual.
    abs_tol : float
        Target for the unscaled residual infinity norm.
    rcond : float
        Relative singular-value cutoff of the step.

    Returns
    -------
    DensityProfile, NewtonReport

    Raises
    ------
    DegeneracyError
        When the step is not finite or more than half the spectrum is cut.
    DivergenceError
        When no convergence within ``max_iter`` or the line search fails.
    """
    t0 = time.perf_counter()
    tensors = tensors if tensors is not None else assemble(problem)
    if initial is None:
        initial = initial_guess(problem)
    c = _as_coeffs(problem, initial)
    mvec = problem.profile(np.zeros_like(c)).mass_vector()
    M = problem.mass
    m0 = float(mvec @ c)
    if abs(m0 / M - 1.0) > 0.5:
        raise DomainError(f"initial mass {m0:.4g} not within 50% of target {M:.4g}")
    n = c.size
    e_last = np.zeros(n)
    e_last[-1] = 1.0
    mu = 0.0

    def merit(cc, mm, scale):
        F = tensors.residual(cc) + mm * e_last
        return np.concatenate([F / scale, [(mvec @ cc - M) / M]])

    damping = []
    deficiency = 0
    best = (np.inf, c.copy(), mu)
    converged = _check(tensors, c, mu, e_last, mvec, M, tol, abs_tol)
    it = 0
    while not converged and it < max_iter:
        it += 1
        scale = _row_scales(tensors, c)
        g = merit(c, mu, scale)
        gnorm = float(np.linalg.norm(g))
        if gnorm < best[0]:
            best = (gnorm, c.copy(), mu)
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = tensors.jacobian(c) * c[None, :] / scale[:, None]
        # the multiplier is measured in units of the last row's size
        A[:n, n] = e_last * scale[-1] / scale
        A[n, :n] = mvec * c / M
        step, _, rank, _ = np.linalg.lstsq(A, -g, rcond=rcond)
        deficiency = n + 1 - int(rank)
        if not np.all(np.isfinite(step)) or rank < (n + 1) // 2:
            raise DegeneracyError(f"bordered Jacobian numerically singular (rank {rank} of {n + 1})")
        dy, dmu = step[:n], step[n] * scale[-1]
        # cap multiplicative steps at a factor e**2 per iteration
        lam = min(1.0, 2.0 / max(float(np.max(np.abs(dy))), 1e-300))
        for _ in range(MAX_HALVINGS + 1):
            c_new = c * np.exp(lam * dy)
            mu_new = mu + lam * dmu
            g_new = merit(c_new, mu_new, scale)
            if np.all(np.isfinite(g_new)) and np.linalg.norm(g_new) < (1.0 - 1e-4 * lam) * gnorm:
                break
            lam *= 0.5
        else:
            # no decrease left: accept only if already at the rounding floor
            if gnorm < 1e3 * tol and _check(tensors, c, mu, e_last, mvec, M, 1e3 * tol, abs_tol):
                damping.append(0.0)
                converged = True
                break
            raise DivergenceError("line search failed", best=problem.profile(best[1]),
                                  report=_report(False, it, tensors, best[1], best[2], e_last, mvec, M, damping,
                                                 deficiency, t0))
        damping.append(lam)
        c, mu = c_new, mu_new
        log.debug("newton %d: lambda=%.3g |g|=%.3e", it, lam, gnorm)
        converged = _check(tensors, c, mu, e_last, mvec, M, tol, abs_tol)
    report = _report(converged, it, tensors, c, mu, e_last, mvec, M, damping, deficiency, t0)
    if not converged:
        raise DivergenceError(f"no convergence in {max_iter} iterations", best=problem.profile(best[1]),
                              report=report)
    return problem.profile(c), report


def _row_scales(tensors, c):
    s = tensors.scales(c)
    return np.where(s > 0, s, 1.0)


def _check(tensors, c, mu, e_last, mvec, M, tol, abs_tol):
    F = tensors.residual(c) + mu * e_last
    return bool(np.max(np.abs(F / _row_scales(tensors, c))) < tol and np.max(np.abs(F)) < abs_tol
                and abs(mvec @ c - M) < 1e-12 * M)


def _report(converged, it, tensors, c, mu, e_last, mvec, M, damping, deficiency, t0):
    F = tensors.residual(c) + mu * e_last
    return NewtonReport(
        converged=bool(converged),
        iterations=int(it),
        residual_inf=float(np.max(np.abs(F))),
        scaled_residual_inf=float(np.max(np.abs(F / _row_scales(tensors, c)))),
        mass_residual=float(mvec @ c - M),
        multiplier=float(mu),
        damping=list(map(float, damping)),
        projection_active=False,
        rank_deficiency=int(deficiency),
        min_coefficient=float(np.min(c)),
        seconds=time.perf_counter() - t0,
    )


# domain marching ---------------------------------------------------------------

def _tail_fit(x, phi, lo, hi):
    """Least squares ``log phi = logC + alpha log x - a x`` on ``[lo, hi]``."""
    m = (x >= lo) & (x <= hi) & (phi > 0)
    if m.sum() < 3:
        raise DomainError("too few nodes to extrapolate the tail")
    A = np.column_stack([np.ones(m.sum()), np.log(x[m]), -x[m]])
    return np.linalg.lstsq(A, np.log(phi[m]), rcond=None)[0]


def _stage_ends(grid, mass, first, step):
    ends = []
    x = grid.nodes
    e = first * mass
    while e < x[-1] * (1 - 1e-9):
        k = int(np.searchsorted(x, e * (1 + 1e-9)))
        if k >= 16 and (not ends or k > ends[-1]):
            ends.append(k)
        e += step * mass
    return ends + [x.size]


def solve_profile(mass=1.0, rho=2.0, grid=None, basis="sqrt", order=8, first_stage=4.0, stage_length=16.0, max_iter=30,
                  tol=NEWTON_TOL, abs_tol=1e-8, initial=None, initial_decay=INITIAL_DECAY):
    """Solve the profile equation on ``grid`` by marching the domain outward.

    For ``rho = 2`` the profile decays like ``exp(-a x / M)``; starting Newton
    on the whole domain leaves the far tail on a plateau where every step is
    dominated by the dilation mode.  Instead the problem is solved on the
    nodes below ``first_stage * mass`` (from ``initial_guess`` with decay
    ``initial_decay / mass``), then on prefixes of ``grid`` longer by
    ``stage_length * mass`` each; every stage starts from the previous
    solution extended by an exponential-times-power fit, and the tail closure
    rate is updated to the fitted rate.  For ``rho < 2`` the problem is
    reached by continuation in ``rho`` from the ``rho = 2`` profile with the
    power-law closure ``x**-rho``.

    Returns
    -------
    DensityProfile, NewtonReport
        The report of the last stage; earlier ones are in ``report.stages``.
    """
    rho = check_rho(rho)
    grid = grid if grid is not None else default_grid()
    x = grid.nodes
    if rho < 2.0:
        if initial is not None:
            prob = SspeProblem(rho, mass, grid, basis, TailClosure.power(rho), order)
            return newton_solve(prob, initial, tol=tol, abs_tol=abs_tol, max_iter=max_iter)
        steps = max(1, int(np.ceil((2.0 - rho) / RHO_STEP - 1e-9)))
        fam = continuation_in_rho(rho, steps, mass=mass, grid=grid, basis=basis, order=order, max_iter=max_iter,
                                  tol=tol, abs_tol=abs_tol)
        if fam.failed_index is not None:
            raise DivergenceError(f"continuation failed at rho={fam.failed_rho:.4g}: {fam.error}",
                                  best=fam.profiles[-1] if fam.profiles else None)
        return fam.profiles[-1], fam.reports[-1]
    ends = [x.size] if initial is not None else _stage_ends(grid, mass, first_stage, stage_length)
    stages = []
    c = None
    rate = 3.0 / mass
    for k in ends:
        sub = Grid(x[:k])
        if c is None:
            if initial is not None:
                init = _as_coeffs(SspeProblem(rho, mass, sub, basis, TailClosure(), order), initial)
                prof = initial if isinstance(initial, DensityProfile) else None
                if prof is not None and prof.tail.kind == "exponential":
                    rate = prof.tail.value
                prob = SspeProblem(rho, mass, sub, basis, TailClosure.exponential(rate), order)
            else:
                prob = SspeProblem(rho, mass, sub, basis, TailClosure.exponential(rate), order)
                init = initial_guess(prob, initial_decay / mass).coeffs
        else:
            k0 = c.size
            xs = x[:k0]
            phi = c * xs ** _sigma(basis)
            logC, alpha, a = _tail_fit(xs, phi, 0.6 * xs[-1], 0.9 * xs[-1])
            if not a > 0:
                raise DivergenceError("tail extrapolation does not decay", best=prob.profile(c),
                                      report=rep)
            xn = x[k0:k]
            ext = np.exp(logC + alpha * np.log(xn) - a * xn) * xn ** -_sigma(basis)
            init = np.concatenate([c, ext])
            prob = SspeProblem(rho, mass, sub, basis, TailClosure.exponential(a), order)
        prof, rep = newton_solve(prob, init, tol=tol, abs_tol=abs_tol, max_iter=max_iter)
        c = prof.coeffs
        stages.append(rep)
    rep.stages = stages[:-1]
    return prof, rep




# continuation in rho -------------------------------------------------------------

@dataclass
class ProfileFamily:
    """Profiles along a continuation path; ``failed_index`` marks the first failure."""

    rhos: list
    profiles: list
    reports: list
    failed_index: int | None = None
    error: str | None = None

    @property
    def complete(self):
        return self.failed_index is None

    @property
    def failed_rho(self):
        return None if self.failed_index is None else self.rhos[self.failed_index]


def _fat_tail_predictor(profile, rho_old, rho, scale):
    """Warm start for exponent ``rho`` from a converged profile at ``rho_old``.

    Leaving the exponential case, the tail ``(2-rho)(rho-1)||Phi||_rho x**-rho``
    is superposed (as a maximum); between fat-tailed members the tail beyond
    ``scale`` is tilted by ``x**(rho_old - rho)``.
    """
    x = profile.nodes
    phi = profile.evaluate(x)
    if rho_old >= 2.0:
        trial = profile.with_coeffs(profile.coeffs, TailClosure.power(rho))
        C = (2.0 - rho) * (rho - 1.0) * rho_norm(trial, rho).value
        phi = np.maximum(phi, C * x**-rho)
    else:
        phi = phi * np.where(x > scale, (x / scale) ** (rho_old - rho), 1.0)
    return phi * x ** -_sigma(profile.basis)


def continuation_in_rho(rho_end, steps=5, mass=1.0, grid=None, rho_start=2.0, basis="sqrt", order=8, start=None,
                        max_iter=30, tol=NEWTON_TOL, abs_tol=1e-8):
    """March the exponent from ``rho_start`` to ``rho_end`` in equal steps.

    Each member is warm-started from its predecessor; members with ``rho < 2``
    use the power-law closure ``x**-rho``.  A failure stops the march and is
    recorded in the returned family instead of raised.

    Parameters
    ----------
    rho_end : float
        Final exponent in ``(1, 2]``.
    steps : int
        Number of Newton solves after the starting one.
    start : DensityProfile, optional
        Converged profile at ``rho_start``; solved afresh when omitted.

    Returns
    -------
    ProfileFamily
        Includes the starting member at index 0.
    """
    rho_end = check_rho(rho_end)
    rho_start = check_rho(rho_start)
    if steps < 1:
        raise DomainError("need at least one continuation step")
    grid = grid if grid is not None else (start.grid if start is not None else default_grid())
    if start is None:
        start, rep0 = solve_profile(mass, rho_start, grid, basis, order, max_iter=max_iter, tol=tol,
                                    abs_tol=abs_tol)
    else:
        rep0 = None
    fam = ProfileFamily([rho_start], [start], [rep0])
    path = np.linspace(rho_start, rho_end, int(steps) + 1)[1:]
    prev, rho_prev = start, rho_start
    for k, rho in enumerate(path, start=1):
        tail = TailClosure.power(rho) if rho < 2.0 else prev.tail
        prob = SspeProblem(float(rho), mass, grid, basis, tail, order)
        try:
            if rho == rho_prev:
                init = prev.coeffs
            else:
                init = _fat_tail_predictor(prev, rho_prev, rho, mass)
                m = prob.profile(init).mass()
                init = init * (mass / m)
            prof, rep = newton_solve(prob, init, tol=tol, abs_tol=abs_tol, max_iter=max_iter)
        except (DivergenceError, DegeneracyError, DomainError, RangeError) as exc:
            fam.rhos.append(float(rho))
            fam.failed_index = k
            fam.error = str(exc)
            log.warning("continuation stopped at rho=%.4g: %s", rho, exc)
            return fam
        fam.rhos.append(float(rho))
        fam.profiles.append(prof)
        fam.reports.append(rep)
        prev, rho_prev = prof, float(rho)
    return fam


# strong form -------------------------------------------------------------------------

def _strong_terms(profile, x, rho):
    """The five terms ``(-x Phi'/rho, -Phi, I1, I2, I3)`` of the strong equation at ``x``."""
    phi = profile.evaluate
    nodes = profile.nodes
    xN = nodes[-1]

    def f(s):
        return phi(s) / np.sqrt(s)

    fx = float(f(x))
    quad = dict(limit=500, epsabs=0.0, epsrel=1e-11)

    def brk(lo, hi, extra):
        pts = np.concatenate([nodes, extra])
        pts = np.unique(pts[(pts > lo) & (pts < hi)])
        return pts

    def piecewise(fun, lo, hi, extra):
        pts = np.concatenate([[lo], brk(lo, hi, extra), [hi]])
        total = 0.0
        with warnings.catch_warnings():
            # kinks of the interpolant limit quad to ~1e-9; far below the weak scale
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            for a, b in zip(pts[:-1], pts[1:]):
                total += integrate.quad(fun, a, b, **quad)[0]
        return total

    def i1(y):
        return (f(x + y) + f(x - y) - 2.0 * fx) * f(y)

    I1 = piecewise(i1, 0.0, 0.5 * x, np.concatenate([nodes - x, x - nodes]))
    I2 = -2.0 * fx * piecewise(f, 0.5 * x, x, np.zeros(0))

    def i3(y):
        return f(x + y) * f(y)

    hi = max(xN, 0.5 * x)
    I3 = piecewise(i3, 0.5 * x, hi, nodes - x) if hi > 0.5 * x else 0.0
    I3 += integrate.quad(i3, hi, np.inf, **quad)[0]
    d = float(profile.derivative(x))
    return np.array([-x * d / rho, -float(phi(x)), I1, I2, I3])


def strong_residual(profile, x, rho=2.0):
    """Pointwise residual of the strong profile equation at ``x``.

    ``-(1/rho) x Phi' - Phi`` minus the three collision integrals (split at
    ``x/2`` and ``x``), evaluated by adaptive quadrature on the interpolated
    profile and its tail closure.  ``x`` must lie at least two cells inside
    the grid.
    """
    rho = check_rho(rho)
    nodes = profile.nodes
    x = float(x)
    if not nodes[2] <= x <= nodes[-3]:
        raise DomainError(f"x={x} too close to the grid boundary")
    t = _strong_terms(profile, x, rho)
    return float(t[0] + t[1] - t[2] - t[3] - t[4])


def strong_residual_scale(profile, x, rho=2.0):
    """Sum of the absolute sizes of the strong-equation terms at ``x``."""
    return float(np.sum(np.abs(_strong_terms(profile, float(x), check_rho(rho)))))


def weak_residual_scale(profile, x, rho=2.0, samples=7):
    """Strong-residual size implied by the weak residual in the cell holding ``x``.

    The hinge residual ``F_z`` vanishes at the nodes and ``d2F/dz2`` equals the
    strong residual, so inside a cell of width ``h`` it bulges to about
    ``R h**2 / 8``.  Returns ``8 max |F_z| / h**2`` over ``samples`` interior
    test points.
    """
    rho = check_rho(rho)
    nodes = profile.nodes
    k = int(np.searchsorted(nodes, float(x)))
    if not 1 <= k < nodes.size:
        raise DomainError("x outside the grid")
    z = np.linspace(nodes[k - 1], nodes[k], samples + 2)[1:-1]
    asm = HingeAssembler(profile.grid, profile.basis, profile.tail)
    L = linear_matrix(profile.grid, profile.basis, profile.tail, rho, z)
    c = profile.coeffs
    F = (asm.tensor(z) @ c) @ c - L @ c
    h = nodes[k] - nodes[k - 1]
    return float(8.0 * np.max(np.abs(F)) / h**2)


# estimator -------------------------------------------------------------------------------

class SSPESolver(BaseEstimator):
    """Estimator wrapper around :func:`solve_profile`.

    Parameters
    ----------
    rho : float, default 2.0
        Scaling exponent in ``(1, 2]``.
    mass : float, default 1.0
        Target mass of the profile.
    n_nodes : int, default 200
    x_max : float, default 40.0
    per_octave : int, default 10
        The grid is ``x_max * 2**(-k / per_octave)``, ``k = 0 .. n_nodes - 1``.
    basis : {"sqrt", "plain"}
    order : int, default 8
        Gauss points per outer panel in the assembly.
    max_iter : int, default 30
        Newton iterations per solve.
    tol : float
        Row-scaled residual target.

    Attributes
    ----------
    profile_ : DensityProfile
    report_ : NewtonReport
    grid_ : Grid
    """

    def __init__(self, rho=2.0, mass=1.0, n_nodes=200, x_max=40.0, per_octave=10, basis="sqrt", order=8,
                 max_iter=30, tol=NEWTON_TOL):
        self.rho = rho
        self.mass = mass
        self.n_nodes = n_nodes
        self.x_max = x_max
        self.per_octave = per_octave
        self.basis = basis
        self.order = order
        self.max_iter = max_iter
        self.tol = tol

    def _grid(self):
        return Grid.dyadic(self.x_max, self.n_nodes, self.per_octave)

    def fit(self, X=None, y=None, initial=None):
        """Solve for the profile.  ``X`` and ``y`` are ignored (nothing is learned from data)."""
        check_rho(self.rho)
        if not self.mass > 0:
            raise DomainError("mass must be positive")
        self.grid_ = self._grid()
        self.profile_, self.report_ = solve_profile(self.mass, self.rho, self.grid_, self.basis, self.order,
                                                    max_iter=self.max_iter, tol=self.tol, initial=initial)
        return self

    def predict(self, X):
        """Evaluate the fitted profile at the sizes in ``X`` (any shape flattened to 1-D)."""
        check_is_fitted(self, "profile_")
        x = check_array(np.asarray(X, dtype=float).reshape(-1, 1), ensure_all_finite=True).ravel()
        if np.any(x <= 0):
            raise DomainError("profile is defined for positive sizes only")
        return self.profile_.evaluate(x)

    def residual(self):
        """Weak residual vector of the fitted coefficients (without the multiplier)."""
        check_is_fitted(self, "profile_")
        prob = SspeProblem(self.rho, self.mass, self.grid_, self.basis, self.profile_.tail, self.order)
        return residual(assemble(prob), self.profile_.coeffs)
