"""Time evolution of the quadratic condensate equation.

Two backends share one output type:

* a deterministic scheme that advances the hinge-tested moments
  ``int (z_n - x)_+ dG`` with an adaptive explicit Runge-Kutta pair, and
* a stochastic particle system in which pairs collide at rate
  ``2 w / sqrt(x_i x_j)``; the smaller particle survives and the larger is
  replaced by the sum or the difference with probability one half.

Deterministic closure.  The tested moments do not see the split of mass
between the atom and the head cell ``(0, x_1]``.  Since the hinge form
satisfies ``Q_z / z -> (pi**2 / 6) A**2`` as ``z -> 0`` for a ``A / sqrt(x)``
head, the atom gains mass at the rate ``(pi**2 / 6) c_1**2`` where ``c_1`` is
the head coefficient of the sqrt basis.  That law replaces the first hinge;
the others and exact conservation of the total mass close the system.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate
from scipy.linalg import lu_factor, lu_solve

from .assembly import HingeAssembler
from .exceptions import DomainError, StiffnessError, ValidityError
from .mesh import DensityProfile, Grid, KineticState, TailClosure

log = logging.getLogger(__name__)

HEAD_FLUX = math.pi**2 / 6.0
BACKENDS = ("deterministic", "monte-carlo")


@dataclass(frozen=True)
class EvolverConfig:
    """Run settings shared by both backends.

    Parameters
    ----------
    t_end : float
        Final time.
    sample_times : sequence of float, optional
        Output times (default: 21 equispaced points on ``[t_start, t_end]``).
    rtol, atol : float
        Runge-Kutta tolerances.
    max_step : float
    origin_threshold : float
        Sizes below it belong to the atom.
    backend : {"deterministic", "monte-carlo"}
    test_nodes : sequence of float, optional
        Hinge positions reported in the trajectory (default: grid nodes).
    seed : int, optional
    replicas : int
        Independent particle systems (Monte Carlo only).
    particles : int
        Particles per replica when sampling from a state (Monte Carlo only).
    max_events : int
        Event budget per replica (Monte Carlo only).
    log_events : int
        Number of leading events kept in the event log (Monte Carlo only).
    """

    t_end: float
    sample_times: tuple | None = None
    rtol: float = 1e-8
    atol: float = 1e-13
    max_step: float = np.inf
    origin_threshold: float = 1e-6
    backend: str = "deterministic"
    test_nodes: tuple | None = None
    seed: int | None = None
    replicas: int = 1
    particles: int = 10**5
    max_events: int = 10**9
    log_events: int = 0

    def __post_init__(self):
        if not self.t_end > 0:
            raise DomainError("time horizon must be positive")
        if self.backend not in BACKENDS:
            raise DomainError(f"unknown backend {self.backend!r}")
        if not self.origin_threshold > 0:
            raise DomainError("origin threshold must be positive")
        if self.replicas < 1:
            raise DomainError("need at least one replica")

    def times(self, t0=0.0):
        if self.sample_times is None:
            return np.linspace(t0, self.t_end, 21)
        ts = np.asarray(self.sample_times, dtype=float)
        if np.any(np.diff(ts) <= 0) or ts[0] < t0 or ts[-1] > self.t_end * (1 + 1e-12):
            raise DomainError("sample times must increase within [t_start, t_end]")
        return ts


@dataclass
class TrajectoryRecord:
    """Sampled diagnostics of a run.

    ``tested`` has shape ``(len(times), len(test_nodes))``.  For Monte Carlo
    runs with several replicas the arrays hold replica means and
    ``tested_se`` the standard errors of those means.
    """

    times: np.ndarray
    atom: np.ndarray
    density_mass: np.ndarray
    energy: np.ndarray
    median: np.ndarray
    test_nodes: np.ndarray
    tested: np.ndarray
    origin_mass: np.ndarray | None = None
    origin_energy: np.ndarray | None = None
    tested_se: np.ndarray | None = None
    energy_se: np.ndarray | None = None
    final_state: KineticState | None = None
    events: np.ndarray | None = None
    event_log: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def total_mass(self):
        return self.atom + self.density_mass

    def columns(self):
        cols = {
            "t": self.times,
            "atom": self.atom,
            "density_mass": self.density_mass,
            "energy": self.energy,
            "median": self.median,
        }
        if self.origin_mass is not None:
            cols["origin_mass"] = self.origin_mass
            cols["origin_energy"] = self.origin_energy
        for k, z in enumerate(self.test_nodes):
            cols[f"psi[{z:.17g}]"] = self.tested[:, k]
        if self.tested_se is not None:
            for k, z in enumerate(self.test_nodes):
                cols[f"se_psi[{z:.17g}]"] = self.tested_se[:, k]
        return cols

    def to_csv(self, path, header_comment=None):
        """Write one row per sample; the header names every tested moment."""
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in str(header_comment).splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([f"{v:.17g}" for v in row])


# deterministic backend --------------------------------------------------------------

_TENSOR_CACHE: dict = {}


def _tensor(grid, basis, tail, z=None):
    key = (hash(grid), basis, tail, None if z is None else np.asarray(z).tobytes())
    if key not in _TENSOR_CACHE:
        if len(_TENSOR_CACHE) > 4:
            _TENSOR_CACHE.clear()
        _TENSOR_CACHE[key] = HingeAssembler(grid, basis, tail).tensor(z)
    return _TENSOR_CACHE[key]


def rhs_tested_moments(state: KineticState, test_nodes=None):
    """Time derivative of ``int (z_n - x)_+ dG`` for the test nodes ``z_n``.

    Equals ``(1/2) iint h(x) h(y) (x y)**-0.5 [psi(x+y) + psi(|x-y|) - 2 psi(x v y)]``
    over positive sizes; the atom does not enter.
    """
    h = state.density
    T = _tensor(h.grid, h.basis, h.tail, test_nodes)
    c = h.coeffs
    return (T @ c) @ c


def _check_initial(initial, config):
    h = initial.density
    if h.basis != "sqrt":
        raise DomainError("the deterministic scheme needs the sqrt basis (its head closes the atom flux)")
    if not config.origin_threshold < h.grid.x_min:
        raise DomainError("origin threshold must lie below the first node")
    if not np.isfinite(h.mass()) or not np.isfinite(h.energy()):
        raise DomainError("initial density needs finite mass and energy")


def evolve(initial: KineticState, config: EvolverConfig) -> TrajectoryRecord:
    """Deterministic evolution on the grid of ``initial.density``.

    Unknowns are the basis coefficients ``c`` and the atom ``m``.  Equations:
    the tested moments at nodes ``2..N``, the atom flux
    ``dm/dt = (pi**2/6) c_1**2``, and ``m + mass(c) = const``.  The linear map
    from ``dc/dt`` to these quantities is factorized once.

    Raises
    ------
    StiffnessError
        If the step-size controller collapses; carries the last good state.
    """
    if config.backend != "deterministic":
        return mc_run(initial, config)
    _check_initial(initial, config)
    t0 = time.perf_counter()
    h = initial.density
    grid = h.grid
    x = grid.nodes
    T = _tensor(grid, h.basis, h.tail)
    E = h.truncated_energy_matrix(x)
    mvec = h.mass_vector()
    A = np.vstack([E[1:], mvec])
    lu = lu_factor(A)
    total = initial.total_mass
    nfev = [0]

    def rhs(_t, y):
        nfev[0] += 1
        c = y[:-1]
        Q = (T @ c) @ c
        flux = HEAD_FLUX * c[0] ** 2
        dc = lu_solve(lu, np.concatenate([-Q[1:], [-flux]]))
        return np.concatenate([dc, [flux]])

    ts = config.times(initial.time)
    y0 = np.concatenate([h.coeffs, [initial.atom]])
    sol = integrate.solve_ivp(rhs, (initial.time, config.t_end), y0, method="RK45", t_eval=ts, rtol=config.rtol,
                              atol=config.atol, max_step=config.max_step)
    if sol.status != 0:
        k = sol.y.shape[1] - 1
        last = None
        if k >= 0:
            last = _state(sol.t[k], sol.y[:, k], h, total)
        raise StiffnessError(f"integrator stopped: {sol.message}", last_state=last)
    rec = _record_from_coeffs(sol.t, sol.y, h, total, config)
    rec.info.update(nfev=nfev[0], seconds=time.perf_counter() - t0, backend="deterministic",
                    min_coefficient=float(np.min(sol.y[:-1])))
    return rec


def _state(t, y, h, total):
    c = y[:-1]
    prof = DensityProfile(h.grid, np.maximum(c, 0.0), h.basis, h.tail)
    # exact bookkeeping: the atom is what the density does not hold
    atom = max(total - float(h.mass_vector() @ c), 0.0)
    return KineticState(float(t), atom, prof)


def _record_from_coeffs(ts, Y, h, total, config):
    z = h.nodes if config.test_nodes is None else np.asarray(config.test_nodes, dtype=float)
    mvec = h.mass_vector()
    evec = h.energy_vector()
    delta = config.origin_threshold
    zero = DensityProfile(h.grid, np.zeros(len(h.grid)), h.basis, h.tail)
    below_m = zero.moment_matrix(0, 0.0, np.array([delta]))[0]
    below_e = zero.moment_matrix(1, 0.0, np.array([delta]))[0]
    trunc = zero.truncated_energy_matrix(z)
    n = len(ts)
    out = {k: np.empty(n) for k in ("atom", "dm", "en", "med", "om", "oe")}
    tested = np.empty((n, z.size))
    for k in range(n):
        c = Y[:-1, k]
        om = float(below_m @ c)
        dm = float(mvec @ c) - om
        # the atom absorbs everything below the origin threshold
        atom = total - dm
        out["atom"][k] = atom
        out["dm"][k] = dm
        out["en"][k] = float(evec @ c)
        out["om"][k] = om
        out["oe"][k] = float(below_e @ c)
        tested[k] = z * total - trunc @ c
        st = KineticState(float(ts[k]), max(total - float(mvec @ c), 0.0),
                          DensityProfile(h.grid, np.maximum(c, 0.0), h.basis, h.tail))
        out["med"][k] = st.median()
    return TrajectoryRecord(np.asarray(ts, dtype=float), out["atom"], out["dm"], out["en"], out["med"], z, tested,
                            origin_mass=out["om"], origin_energy=out["oe"],
                            final_state=_state(ts[-1], Y[:, -1], h, total))


# Monte Carlo backend ----------------------------------------------------------------------

@dataclass
class ParticleEnsemble:
    """Equal-weight particles plus a condensate counter.

    Parameters
    ----------
    sizes : array
        Active particle sizes (positive).
    weight : float
        Mass carried by each particle.
    condensed : int
        Particles already absorbed at the origin.
    seed : int, optional
    """

    sizes: np.ndarray
    weight: float
    condensed: int = 0
    seed: int | None = None

    def __post_init__(self):
        self.sizes = np.array(self.sizes, dtype=float)
        if self.sizes.ndim != 1 or np.any(~(self.sizes > 0)):
            raise DomainError("active particle sizes must be positive")
        if not self.weight > 0:
            raise DomainError("particle weight must be positive")
        if self.condensed < 0:
            raise DomainError("condensate counter must be nonnegative")

    @property
    def count(self):
        return self.sizes.size + self.condensed

    @property
    def mass(self):
        return self.weight * self.count

    @property
    def energy(self):
        return self.weight * float(np.sum(self.sizes))

    def tested_moments(self, z):
        z = np.asarray(z, dtype=float)
        s = np.sort(self.sizes)
        csum = np.concatenate([[0.0], np.cumsum(s)])
        k = np.searchsorted(s, z, side="right")
        act = z * k - csum[k]
        return self.weight * (act + self.condensed * z)

    @classmethod
    def from_state(cls, state: KineticState, n, seed=None, fine=4000):
        """Sample ``n`` particles from ``state`` (atom particles start condensed).

        Sizes are drawn by inverting the cumulative mass of the density on a
        fine logarithmic mesh with linear interpolation in between.
        """
        n = int(n)
        if n < 2:
            raise DomainError("need at least two particles")
        rng = np.random.default_rng(seed)
        total = state.total_mass
        w = total / n
        n_atom = int(round(state.atom / w))
        h = state.density
        lo = h.grid.x_min * 1e-6
        hi = h.grid.x_max
        if h.tail.kind != "none":
            hi *= 4.0
        mesh = np.concatenate([[0.0], np.geomspace(lo, hi, fine)])
        cdf = h.moment(0, 0.0, mesh[1:])
        cdf = np.concatenate([[0.0], cdf])
        cdf = cdf / cdf[-1]
        u = rng.random(n - n_atom)
        sizes = np.interp(u, cdf, mesh)
        sizes = np.where(sizes > 0, sizes, lo)
        return cls(sizes, w, n_atom, seed)


@numba.njit(cache=True)
def _fenwick_build(vals):
    n = vals.size
    tree = np.zeros(n + 1)
    for i in range(n):
        tree[i + 1] += vals[i]
        j = i + 1 + ((i + 1) & -(i + 1))
        if j <= n:
            tree[j] += tree[i + 1]
    return tree


@numba.njit(cache=True)
def _fenwick_add(tree, i, delta):
    n = tree.size - 1
    j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & -j


@numba.njit(cache=True)
def _fenwick_search(tree, target):
    """Smallest index whose prefix sum exceeds ``target``."""
    n = tree.size - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step //= 2
    return min(pos, n - 1)


@numba.njit(cache=True)
def _mc_kernel(sizes, weight, delta, sample_times, z, seed, max_events, log_cap):
    """Run one replica; returns per-sample tested moments, energies, counts and the event log."""
    np.random.seed(seed)
    n = sizes.size
    x = sizes.copy()
    active = np.ones(n, dtype=np.bool_)
    s = 1.0 / np.sqrt(x)
    tree = _fenwick_build(s)
    S2 = 0.0
    for i in range(n):
        S2 += s[i] * s[i]
    n_act = n
    n_cond = 0
    t = 0.0
    ns = sample_times.size
    tested = np.zeros((ns, z.size))
    energy = np.zeros(ns)
    cond = np.zeros(ns, dtype=np.int64)
    med = np.zeros(ns)
    evar = np.zeros(ns)
    var = 0.0
    logt = np.zeros(log_cap)
    logi = np.zeros((log_cap, 3), dtype=np.int64)
    events = 0
    k = 0
    since_rebuild = 0
    while k < ns:
        S = 0.0
        # total of the tree (prefix over everything)
        j = n
        while j > 0:
            S += tree[j]
            j -= j & -j
        rate = weight * (S * S - S2)
        if n_act < 2 or rate <= 0.0 or events >= max_events:
            t_next = np.inf
        else:
            t_next = t - math.log(1.0 - np.random.random()) / rate
        while k < ns and sample_times[k] <= t_next:
            e = 0.0
            for i in range(n):
                if active[i]:
                    e += x[i]
            energy[k] = weight * e
            evar[k] = weight * weight * var
            cond[k] = n_cond
            need = (n + 1) // 2 - n_cond
            if need <= 0:
                med[k] = 0.0
            else:
                med[k] = np.sort(x[active])[need - 1]
            for q in range(z.size):
                acc = 0.0
                for i in range(n):
                    if active[i] and x[i] < z[q]:
                        acc += z[q] - x[i]
                tested[k, q] = weight * (acc + n_cond * z[q])
            k += 1
        if k >= ns or not np.isfinite(t_next):
            break
        t = t_next
        # pair with probability proportional to s_i s_j, i != j
        while True:
            i = _fenwick_search(tree, np.random.random() * S)
            jj = _fenwick_search(tree, np.random.random() * S)
            if i != jj and active[i] and active[jj]:
                break
        if x[i] < x[jj]:
            small, big = i, jj
        else:
            small, big = jj, i
        up = np.random.random() < 0.5
        if up:
            new = x[big] + x[small]
        else:
            new = x[big] - x[small]
        if events < log_cap:
            logt[events] = t
            logi[events, 0] = small
            logi[events, 1] = big
            logi[events, 2] = 1 if up else 0
        events += 1
        # the size sum moves by +-x_small: a martingale increment
        var += x[small] * x[small]
        old_s = s[big]
        if new < delta:
            active[big] = False
            x[big] = 0.0
            s[big] = 0.0
            n_act -= 1
            n_cond += 1
        else:
            x[big] = new
            s[big] = 1.0 / math.sqrt(new)
        _fenwick_add(tree, big, s[big] - old_s)
        S2 += s[big] * s[big] - old_s * old_s
        since_rebuild += 1
        if since_rebuild >= 1000000:
            tree = _fenwick_build(s)
            S2 = 0.0
            for i2 in range(n):
                S2 += s[i2] * s[i2]
            since_rebuild = 0
    return tested, energy, evar, cond, med, events, logt[: min(events, log_cap)], logi[: min(events, log_cap)], x, active


def _replica_seeds(seed, replicas):
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in ss.spawn(replicas)]


def mc_run(initial, config: EvolverConfig) -> TrajectoryRecord:
    """Simulate the particle system to ``config.t_end`` (Monte Carlo backend).

    Pairs are drawn exactly in law: two indices are sampled independently
    with probability proportional to ``x**-0.5`` from a Fenwick tree and
    rejected when equal, which gives pair probabilities proportional to
    ``(x_i x_j)**-0.5``; waiting times are exponential with the total pair
    rate ``w ((sum x**-0.5)**2 - sum x**-1)``.  Particles smaller than the
    origin threshold join the condensate.

    Parameters
    ----------
    initial : ParticleEnsemble or KineticState
        A state is sampled afresh for every replica (``config.particles``
        particles each); an ensemble is shared by all replicas.
    config : EvolverConfig
        Replica seeds are spawned from ``config.seed`` (else ``initial.seed``).

    Returns
    -------
    TrajectoryRecord
        Replica means; ``tested_se`` and ``energy_se`` are standard errors of
        the means over replicas (zero for one replica).  ``info`` holds
        ``energy_martingale_sd``: per replica and sample, the standard
        deviation of the size sum accumulated by the events so far.
    """
    t0 = time.perf_counter()
    seed = config.seed if config.seed is not None else getattr(initial, "seed", None)
    seeds = _replica_seeds(seed, config.replicas)
    ts = config.times(0.0)
    z = np.asarray(config.test_nodes if config.test_nodes is not None
                   else np.geomspace(1e-3, 10.0, 13), dtype=float)
    delta = config.origin_threshold
    runs = []
    for sd in seeds:
        ens = ParticleEnsemble.from_state(initial, config.particles, sd) if isinstance(initial, KineticState) \
            else initial
        if ens.sizes.size < 2:
            raise DomainError("need at least two active particles")
        if np.any(ens.sizes < delta):
            raise DomainError("active particles below the origin threshold")
        out = _mc_kernel(ens.sizes, ens.weight, delta, ts, z, sd, int(config.max_events), int(config.log_events))
        tested, energy, evar, cond, med, events, lt, li, xf, act = out
        tested = tested + ens.weight * ens.condensed * z[None, :]
        runs.append(dict(tested=tested, energy=energy, evar=evar, cond=cond + ens.condensed, med=med,
                         events=events, lt=lt, li=li, x=xf[act], w=ens.weight, n=ens.count))
    R = len(runs)
    stack = {k: np.array([r[k] for r in runs]) for k in ("tested", "energy", "cond", "med")}
    atom = stack["cond"] * np.array([r["w"] for r in runs])[:, None]
    total = np.array([r["w"] * r["n"] for r in runs])[:, None]

    def se(a):
        return a.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(a.shape[1:])

    first = runs[0]
    ev_log = None
    if config.log_events:
        ev_log = np.zeros(first["lt"].size, dtype=[("time", "f8"), ("i", "i8"), ("j", "i8"), ("outcome", "i8")])
        ev_log["time"] = first["lt"]
        ev_log["i"], ev_log["j"], ev_log["outcome"] = first["li"][:, 0], first["li"][:, 1], first["li"][:, 2]
    rec = TrajectoryRecord(ts, atom.mean(axis=0), (total - atom).mean(axis=0), stack["energy"].mean(axis=0),
                           stack["med"].mean(axis=0), z, stack["tested"].mean(axis=0), tested_se=se(stack["tested"]),
                           energy_se=se(stack["energy"]), events=np.array([r["events"] for r in runs]),
                           event_log=ev_log)
    rec.final_state = ParticleEnsemble(first["x"], first["w"], int(first["cond"][-1]), seeds[0])
    rec.info.update(backend="monte-carlo", replicas=R, seeds=seeds, seconds=time.perf_counter() - t0,
                    particles=int(first["n"]), energy_runs=stack["energy"],
                    energy_martingale_sd=np.sqrt(np.array([r["evar"] for r in runs])),
                    # active plus condensed particles at the final time, per replica
                    count_runs=np.array([r["x"].size + int(r["cond"][-1]) for r in runs]))
    return rec


def check_trajectory(rec: TrajectoryRecord, mass_tol=1e-10, energy_tol=1e-3):
    """Conservation and monotonicity diagnostics of a deterministic record."""
    m0 = rec.total_mass[0]
    e0 = rec.energy[0]
    atom = rec.atom
    pos = np.nonzero(atom > 0)[0]
    strict = bool(np.all(np.diff(atom[pos[0]:]) > 0)) if pos.size else True
    out = {
        "mass_drift": float(np.max(np.abs(rec.total_mass / m0 - 1.0))),
        "energy_drift": float(np.max(np.abs(rec.energy / e0 - 1.0))),
        "atom_nondecreasing": bool(np.all(np.diff(atom) >= 0)),
        "atom_strictly_increasing_once_positive": strict,
        "median_nonincreasing": bool(np.all(np.diff(rec.median) <= 0)),
    }
    out["ok"] = (out["mass_drift"] < mass_tol and out["energy_drift"] < energy_tol and out["atom_nondecreasing"]
                 and strict and out["median_nonincreasing"])
    return out


def bump_state(center=1.0, width=0.1, mass=1.0, grid=None, x_min=1e-3, x_max=64.0, per_octave=8):
    """Mass-``mass`` Gaussian bump on a dyadic sqrt-basis grid, empty atom."""
    if grid is None:
        n = int(per_octave * math.log2(x_max / x_min)) + 1
        grid = Grid.dyadic(x_max, n, per_octave)
    prof = DensityProfile.from_function(lambda s: np.exp(-0.5 * ((s - center) / width) ** 2), grid, "sqrt",
                                        TailClosure())
    if prof.mass() <= 0:
        raise ValidityError("bump is not resolved by the grid")
    return KineticState(0.0, 0.0, prof.scaled(mass / prof.mass()))
