import numpy as np
import pytest

from qwte.evolver import (EvolverConfig, ParticleEnsemble, bump_state, check_trajectory, evolve, mc_run,
                          rhs_tested_moments)
from qwte.exceptions import DomainError
from qwte.mesh import DensityProfile, Grid, KineticState, TailClosure
from qwte.sspe import assemble, SspeProblem

Z5 = (0.25, 0.5, 1.0, 2.0, 4.0)


def test_config_validation():
    with pytest.raises(DomainError):
        EvolverConfig(0.0)
    with pytest.raises(DomainError):
        EvolverConfig(1.0, backend="implicit")
    with pytest.raises(DomainError):
        EvolverConfig(1.0, sample_times=(0.0, 0.5, 0.4)).times()


# right-hand side ------------------------------------------------------------------------------

def test_rhs_zero_density():
    st = bump_state()
    zero = KineticState(0.0, 0.3, st.density.with_coeffs(np.zeros(len(st.density.grid))))
    assert np.all(rhs_tested_moments(zero) == 0.0)


def test_rhs_ignores_atom():
    st = bump_state()
    with_atom = KineticState(0.0, 5.0, st.density)
    np.testing.assert_array_equal(rhs_tested_moments(st), rhs_tested_moments(with_atom))


def test_rhs_vanishes_for_hinges_beyond_twice_the_support():
    # with no tail, psi_z is affine on [0, 2 x_N] for z > 2 x_N: mass and energy are null symbols
    g = Grid.dyadic(4.0, 40, 8)
    prof = DensityProfile.from_function(lambda x: np.exp(-x), g, "sqrt", TailClosure())
    st = KineticState(0.0, 0.0, prof)
    z = np.array([8.5, 12.0, 100.0])
    rhs = rhs_tested_moments(st, z)
    assert np.max(np.abs(rhs)) < 1e-13 * np.max(np.abs(rhs_tested_moments(st)))


def test_rhs_matches_quadratic_form_of_profile_equation():
    g = Grid.dyadic(8.0, 30, 4)
    tail = TailClosure.exponential(2.0)
    prof = DensityProfile.from_function(lambda x: np.exp(-2 * x), g, "sqrt", tail)
    T = assemble(SspeProblem(2.0, 1.0, g, "sqrt", tail))
    np.testing.assert_allclose(rhs_tested_moments(KineticState(0.0, 0.0, prof)), T.quadratic(prof.coeffs),
                               rtol=1e-12)


# deterministic run ---------------------------------------------------------------------------------

def test_bump_run_conservation(bump_run):
    _, rec = bump_run
    chk = check_trajectory(rec)
    assert chk["mass_drift"] < 1e-10
    assert chk["energy_drift"] < 1e-3
    assert chk["atom_nondecreasing"] and chk["atom_strictly_increasing_once_positive"]
    assert chk["median_nonincreasing"]
    assert chk["ok"]


def test_bump_run_condenses(bump_run):
    _, rec = bump_run
    assert rec.atom[0] == pytest.approx(0.0, abs=1e-14)
    assert rec.atom[-1] > rec.atom[1] > 0
    assert rec.median[-1] < 0.5 * rec.median[0]


def test_origin_energy_below_threshold_bound(bump_run):
    _, rec = bump_run
    delta = 1e-6
    # energy held below the origin threshold is at most delta times the mass there
    assert np.all(rec.origin_energy <= delta * rec.origin_mass * (1 + 1e-12) + 1e-300)


def test_trajectory_csv_names_tested_moments(tmp_path, bump_run):
    _, rec = bump_run
    path = tmp_path / "traj.csv"
    rec.to_csv(path, header_comment="bump")
    lines = path.read_text().splitlines()
    assert lines[0] == "# bump"
    header = lines[1].split(",")
    assert header[:5] == ["t", "atom", "density_mass", "energy", "median"]
    assert sum(h.startswith("psi[") for h in header) == rec.test_nodes.size
    assert len(lines) == 2 + rec.times.size


def test_evolve_rejects_plain_basis():
    st = bump_state()
    plain = KineticState(0.0, 0.0, DensityProfile(st.density.grid, st.density.coeffs, "plain"))
    with pytest.raises(DomainError):
        evolve(plain, EvolverConfig(1.0))


def test_evolve_rejects_threshold_above_grid():
    with pytest.raises(DomainError):
        evolve(bump_state(), EvolverConfig(1.0, origin_threshold=1.0))


# Monte Carlo ---------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ensemble():
    return ParticleEnsemble.from_state(bump_state(), 2000, seed=11)


def test_ensemble_sampling_matches_state():
    st = bump_state()
    ens = ParticleEnsemble.from_state(st, 20000, seed=2)
    assert ens.count == 20000 and ens.mass == pytest.approx(st.total_mass)
    assert ens.energy == pytest.approx(st.density.energy(), rel=0.01)
    np.testing.assert_allclose(ens.tested_moments(np.array(Z5)), st.tested_moments(np.array(Z5)), rtol=0.02, atol=1e-6)


def test_ensemble_validation():
    with pytest.raises(DomainError):
        ParticleEnsemble(np.array([1.0, -1.0]), 0.5)
    with pytest.raises(DomainError):
        ParticleEnsemble(np.array([1.0, 2.0]), 0.0)


def test_mc_count_conserved(ensemble):
    rec = mc_run(ensemble, EvolverConfig(2.0, sample_times=(0.0, 1.0, 2.0), seed=4, replicas=3))
    assert np.all(rec.info["count_runs"] == ensemble.count)
    fin = rec.final_state
    assert fin.count == ensemble.count
    assert np.all(np.diff(rec.atom) >= 0)


def test_mc_same_seed_same_event_log(ensemble):
    cfg = EvolverConfig(0.5, sample_times=(0.0, 0.5), seed=9, log_events=500)
    a = mc_run(ensemble, cfg)
    b = mc_run(ensemble, cfg)
    assert a.event_log.size == 500
    np.testing.assert_array_equal(a.event_log, b.event_log)
    np.testing.assert_array_equal(a.tested, b.tested)
    c = mc_run(ensemble, EvolverConfig(0.5, sample_times=(0.0, 0.5), seed=10, log_events=500))
    assert not np.array_equal(a.event_log, c.event_log)


def test_mc_event_outcomes_are_two_in_two_out(ensemble):
    rec = mc_run(ensemble, EvolverConfig(0.5, sample_times=(0.0, 0.5), seed=1, log_events=300))
    log = rec.event_log
    assert np.all(log["i"] != log["j"])
    assert np.all(np.diff(log["time"]) >= 0)
    assert set(np.unique(log["outcome"])) <= {0, 1, 2}


def test_mc_terminates_when_everything_condenses():
    ens = ParticleEnsemble(np.array([1e-5, 1.2e-5, 1.4e-5]), 1.0)
    rec = mc_run(ens, EvolverConfig(1e6, sample_times=(0.0, 1e6), seed=0, origin_threshold=1e-6))
    assert rec.final_state.count == 3
    assert rec.final_state.sizes.size <= 1


def test_mc_rejects_single_particle():
    with pytest.raises(DomainError):
        mc_run(ParticleEnsemble(np.array([1.0]), 1.0), EvolverConfig(1.0, seed=0))


def test_mc_size_sum_is_a_martingale(ensemble):
    rec = mc_run(ensemble, EvolverConfig(1e9, sample_times=(0.0, 1e9), seed=5, max_events=20000, replicas=4))
    sd = rec.info["energy_martingale_sd"][:, -1]
    dev = rec.info["energy_runs"][:, -1] - rec.info["energy_runs"][:, 0]
    assert np.all(np.abs(dev) <= 4 * sd + 1e-12)
