"""Self-similar solutions built from profiles, and the scaling families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, ValidityError
from .mesh import DensityProfile, Grid, KineticState, TailClosure
from .sspe import check_rho


@dataclass(frozen=True, eq=False)
class SelfSimilarSolution:
    """``G(t) = m(t) delta_0 + (t+1)**-1 Phi((t+1)**(-1/rho) x)`` with total mass ``M``.

    The atom ``m(t) = M - (t+1)**(1/rho - 1) ||Phi||`` increases with ``t``,
    so the solution is admissible iff ``M >= ||Phi||``.
    """

    rho: float
    total_mass: float
    profile: DensityProfile

    def __post_init__(self):
        object.__setattr__(self, "rho", check_rho(self.rho))
        if not self.total_mass > 0:
            raise DomainError("total mass must be positive")

    @property
    def profile_mass(self):
        return self.profile.mass()

    @property
    def valid(self):
        return self.total_mass >= self.profile_mass * (1 - 1e-14)

    def atom(self, t):
        t = np.asarray(t, dtype=float)
        return self.total_mass - (t + 1.0) ** (1.0 / self.rho - 1.0) * self.profile_mass

    def dilation(self, t):
        """Length scale ``(t+1)**(1/rho)`` of the density at time ``t``."""
        return (float(t) + 1.0) ** (1.0 / self.rho)


def _scaled_tail(tail, factor):
    """Closure of ``x -> Phi(x / factor)`` given the closure of ``Phi``."""
    if tail.kind == "exponential":
        return TailClosure.exponential(tail.value / factor)
    return tail


def _exact_dilate(profile, amplitude, factor):
    """``amplitude * Phi(x / factor)`` exactly, on the grid ``factor * nodes``."""
    grid = Grid(profile.nodes * factor)
    # b_i(x) = x**sigma hat_i(x): Phi(x/L) = L**-sigma x**sigma sum c_i hat_i(x/L)
    sig = profile._sigma
    coeffs = amplitude * factor ** (-sig) * profile.coeffs
    return DensityProfile(grid, coeffs, profile.basis, _scaled_tail(profile.tail, factor))


def resample(profile, grid, match_energy=True):
    """Put ``profile`` on ``grid`` conserving its mass (and energy, when finite).

    Nodal interpolation followed by the smallest correction
    ``c_i <- c_i (1 + alpha + beta x_i / x_N)`` that restores the conserved
    moments of the source.
    """
    x = grid.nodes
    vals = profile.evaluate(x) * x ** (-profile._sigma)
    tail = profile.tail
    out = DensityProfile(grid, np.maximum(vals, 0.0), profile.basis, tail)
    target = [profile.mass()]
    rows = [out.mass_vector()]
    e_src = profile.energy()
    if match_energy and np.isfinite(e_src) and np.isfinite(out.energy()):
        target.append(e_src)
        rows.append(out.energy_vector())
    c = out.coeffs
    if not np.any(c > 0):
        return out
    R = np.array(rows)
    basis = [c, c * x / x[-1]][: len(target)]
    G = np.array([[r @ b for b in basis] for r in R])
    resid = np.array(target) - R @ c
    try:
        coef = np.linalg.solve(G, resid)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(G, resid, rcond=None)[0]
    new = c + sum(k * b for k, b in zip(coef, basis))
    if np.any(new < 0):
        new = c * (target[0] / (rows[0] @ c))
    return out.with_coeffs(new)


def reconstruct(sol: SelfSimilarSolution, t, grid=None) -> KineticState:
    """State at time ``t``: atom ``m(t)``, density ``(t+1)**-1 Phi((t+1)**(-1/rho) x)``.

    Parameters
    ----------
    grid : Grid, optional
        Working grid.  By default the profile's grid, onto which the dilated
        density is resampled conservatively.  Pass ``"exact"`` to keep the
        dilated grid, on which the representation is exact.

    Raises
    ------
    ValidityError
        When ``m(0) = M - ||Phi|| < 0``.
    """
    t = float(t)
    if t < 0:
        raise DomainError("time must be nonnegative")
    m0 = float(sol.atom(0.0))
    if m0 < -1e-14 * sol.total_mass:
        raise ValidityError(f"m(0) = {m0:.6g} < 0: total mass below the profile mass")
    L = sol.dilation(t)
    exact = _exact_dilate(sol.profile, 1.0 / (t + 1.0), L)
    if isinstance(grid, str) and grid == "exact":
        dens = exact
    else:
        target = sol.profile.grid if grid is None else grid
        dens = exact if t == 0.0 and target == sol.profile.grid else resample(exact, target)
    atom = max(float(sol.atom(t)), 0.0)
    return KineticState(t, atom, dens)


def tested_moments(state: KineticState, z):
    """``int (z - x)_+ dG`` for the positions ``z``."""
    return state.tested_moments(np.asarray(z, dtype=float))


def collision_moments(profile: DensityProfile, z, order=8):
    """``c^T Q_z c`` for each position ``z``: the collision rate of the tested moments."""
    from .assembly import HingeAssembler

    asm = HingeAssembler(profile.grid, profile.basis, profile.tail, order)
    c = profile.coeffs
    return np.array([c @ asm.symmetric_form(float(zk)) @ c for zk in np.atleast_1d(z)])


def weak_residual_of_reconstruction(sol: SelfSimilarSolution, t_grid, test_nodes=None, grid="exact"):
    """Defect of the integrated weak identity along the reconstruction.

    For consecutive times ``t_k < t_{k+1}`` and hinges ``z_n`` compares
    ``M_n(t_{k+1}) - M_n(t_k)`` with the integral of the collision moments of
    the reconstructed states (trapezoidal rule with a midpoint correction,
    i.e. Simpson per interval).

    Parameters
    ----------
    test_nodes : array, optional
        Hinge positions, by default the profile's grid nodes.
    grid : "exact" or Grid or None
        Representation of the reconstructed states, see :func:`reconstruct`.
        Resampling onto a fixed grid adds an O(h**2) interpolation defect,
        so the exact (dilated-grid) form is the default.

    Returns
    -------
    dict
        ``relative`` (largest defect over the largest increment),
        ``absolute``, ``scale`` and the ``(intervals, nodes)`` defect array.
    """
    ts = np.asarray(t_grid, dtype=float)
    if ts.ndim != 1 or ts.size < 2 or np.any(np.diff(ts) <= 0):
        raise DomainError("need an increasing time grid with at least two points")
    z = sol.profile.nodes if test_nodes is None else np.asarray(test_nodes, dtype=float)

    def moments_and_rate(t):
        st = reconstruct(sol, t, grid)
        return tested_moments(st, z), collision_moments(st.density, z)

    vals = [moments_and_rate(t) for t in ts]
    mids = [moments_and_rate(0.5 * (a + b)) for a, b in zip(ts[:-1], ts[1:])]
    defects = []
    incs = []
    for k in range(ts.size - 1):
        dt = ts[k + 1] - ts[k]
        quad = dt / 6.0 * (vals[k][1] + 4.0 * mids[k][1] + vals[k + 1][1])
        inc = vals[k + 1][0] - vals[k][0]
        defects.append(inc - quad)
        incs.append(inc)
    defects = np.array(defects)
    scale = float(np.max(np.abs(incs)))
    absolute = float(np.max(np.abs(defects)))
    rel = absolute / scale if scale > 0 else 0.0
    return {"relative": rel, "absolute": absolute, "scale": scale, "defects": defects}


def two_param_map(state: KineticState, kappa, lam) -> KineticState:
    """Member of the family ``int psi dG' (t) = int kappa psi(x / lam) dG(kappa lam t, x)``.

    ``state`` is read as ``G`` at time ``s``; the result is ``G'`` at time
    ``s / (kappa lam)``.  Densities transform as ``h'(y) = kappa lam h(lam y)``
    on the grid ``nodes / lam``, exactly in the nodal basis.
    """
    kappa = float(kappa)
    lam = float(lam)
    if not (kappa > 0 and lam > 0):
        raise DomainError("kappa and lambda must be positive")
    h = state.density
    dens = _exact_dilate(h, kappa * lam, 1.0 / lam)
    return KineticState(state.time / (kappa * lam), kappa * state.atom, dens)


def rescale_profile(profile: DensityProfile, c, grid=None) -> DensityProfile:
    """``x -> Phi(c x)``, of mass ``mass(Phi) / c``.

    Parameters
    ----------
    grid : Grid or "same", optional
        Default: the exact representation on ``nodes / c``.  ``"same"``
        re-interpolates onto the original grid (conserving mass); a ``Grid``
        re-interpolates onto that grid.
    """
    c = float(c)
    if not c > 0:
        raise DomainError("scale factor must be positive")
    exact = _exact_dilate(profile, 1.0, 1.0 / c)
    if grid is None:
        return exact
    target = profile.grid if isinstance(grid, str) and grid == "same" else grid
    return resample(exact, target, match_energy=False)
