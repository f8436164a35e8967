"""End-to-end acceptance criteria; each test records one PASS/FAIL line in the session summary."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, TIMINGS
from qwte.assembly import ASSEMBLY_RTOL
from qwte.asymptotics import fit_head, fit_tail_exponential, fit_tail_powerlaw, mass_sweep
from qwte.evolver import EvolverConfig, ParticleEnsemble, bump_state, check_trajectory, evolve, mc_run
from qwte.kernels import pi2_over_6_check, random_resonant_quadruples, resonant_quartic_closed, \
    resonant_quartic_quadrature
from qwte.selfsim import SelfSimilarSolution, reconstruct, rescale_profile
from qwte.sspe import SspeProblem, assemble, residual


def _record(k, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def rho2_tensors(rho2_profile):
    p = rho2_profile
    return assemble(SspeProblem(2.0, p.mass(), p.grid, p.basis, p.tail))


def test_criterion_01_kernel_oracles():
    t0 = time.perf_counter()
    quad = max(abs(resonant_quartic_quadrature(q) - resonant_quartic_closed(q))
               for q in random_resonant_quadruples(200, seed=2024))
    ident = max(abs(pi2_over_6_check(z) - math.pi**2 / 6) for z in (0.5, 1.0, 2.0, 10.0))
    secs = time.perf_counter() - t0
    ok = quad < 1e-6 and ident < 1e-6 and secs < 30
    _record(1, ok, f"quartic max err {quad:.2e} (<1e-6), pi^2/6 max err {ident:.2e} (<1e-6), {secs:.1f}s (<30s)")


def test_criterion_02_rho2_solve(rho2_solution, rho2_tensors):
    prof, rep = rho2_solution
    # independent recomputation of the weak residual, the last row carrying the multiplier
    F = residual(rho2_tensors, prof.coeffs)
    F[-1] += rep.multiplier
    res = float(np.max(np.abs(F)))
    secs = TIMINGS.get("rho2_solution", float("nan"))
    ok = (rep.converged and rep.total_iterations <= 30 and res < 1e-8 and rep.residual_inf < 1e-8
          and bool(np.all(prof.coeffs >= 0)) and secs < 60 and len(prof.grid) == 200)
    _record(2, ok, f"converged={rep.converged} in {rep.total_iterations} it (<=30), weak residual {res:.2e} "
                   f"(<1e-8), min coeff {prof.coeffs.min():.2e} (>=0), {secs:.1f}s (<60s) at N={len(prof.grid)}")


def test_criterion_03_head(rho2_profile, rho2_refined):
    h = fit_head(rho2_profile)
    h2 = fit_head(rho2_refined[0])
    change = abs(h2.amplitude / h.amplitude - 1)
    ok = abs(h.exponent + 0.5) <= 0.05 and h.relative_deviation <= 0.10 and change < 0.02
    _record(3, ok, f"exponent {h.exponent:.4f} (-0.5+-0.05), A {h.amplitude:.5f} vs {h.predicted:.5f} "
                   f"({100 * h.relative_deviation:.2f}% <10%), N->2N amplitude change {100 * change:.3f}% (<2%)")


def test_criterion_04_exponential_tail(rho2_profile):
    t = fit_tail_exponential(rho2_profile)
    z, rel = t.residual
    curve = " ".join(f"{a:.3g}:{b:+.3f}" for a, b in zip(z, rel))
    ok = t.r2 > 0.999 and t.pinned_deviation < 0.20
    _record(4, ok, f"free fit R^2 {t.r2:.7f} (>0.999), a={t.rate:.4f} alpha={t.power:.3f}; pinned a={t.pinned_rate:.4f} "
                   f"max rel dev {100 * t.pinned_deviation:.1f}% (<20%); residual curve z:rel [{curve}]")


def test_criterion_05_fat_tail(rho19_family):
    prof = rho19_family.profiles[-1]
    rho = rho19_family.rhos[-1]
    t = fit_tail_powerlaw(prof, 1.9)
    ok = rho == pytest.approx(1.9) and abs(t.power + 1.9) <= 0.05 and t.prefactor_deviation <= 0.10
    _record(5, ok, f"slope {t.power:.4f} (-1.9+-0.05) over [{t.window[0]:.3g}, {t.window[1]:.3g}], prefactor "
                   f"{t.pinned_prefactor:.5f} vs {t.predicted_prefactor:.5f} ({100 * t.prefactor_deviation:.2f}% <10%)")


PLOTTED = {0.2: 0.0514, 1.0: 0.2295, 2.0: 0.4468}


def test_criterion_06_mass_sweep():
    masses = [round(0.2 * k, 10) for k in range(1, 11)]
    rep = mass_sweep(masses)
    inv = rep.inverse_rates
    icpt_ok = rep.complete and abs(rep.intercept) < 0.05 * inv.max()
    direct = rep.spot_errors(PLOTTED)
    k = rep.normalization_factor(PLOTTED)
    scaled = rep.spot_errors(PLOTTED, k)
    spot_ok = max(direct.values()) <= 0.15 or max(scaled.values()) <= 0.15
    spread = rep.rate_mass_spread()
    ok = icpt_ok and spot_ok and spread <= 0.15
    spots = ", ".join(f"M={m:g}: {1 / e.rate:.4f}" for m in PLOTTED for e in rep.entries if e.mass == m)
    _record(6, ok, f"{len(rep.entries)}/10 solved, slope {rep.slope:.4f} intercept {rep.intercept:.2e} "
                   f"(|.|<{0.05 * inv.max():.2e}), R^2 {rep.r2:.6f}; 1/a {spots}; spot err direct "
                   f"{100 * max(direct.values()):.1f}%, with factor {k:.4f} {100 * max(scaled.values()):.1f}% "
                   f"(<=15%); a*M spread {100 * spread:.2f}% (<=15%)")


def test_criterion_07_scaling_invariance(rho2_profile):
    worst, last = 0.0, 0.0
    for c in (0.5, 2.0):
        q = rescale_profile(rho2_profile, c)
        T = assemble(SspeProblem(2.0, q.mass(), q.grid, q.basis, q.tail))
        F = residual(T, q.coeffs)
        s = T.scales(q.coeffs)
        # the last row is the dilation border of the bordered system, not a weak equation
        worst = max(worst, float(np.max(np.abs(F[:-1]) / s[:-1])))
        last = max(last, float(abs(F[-1]) / s[-1]))
    ok = worst < 10 * ASSEMBLY_RTOL
    _record(7, ok, f"row-scaled residual of Phi_c, c in {{1/2, 2}}: {worst:.2e} (<{10 * ASSEMBLY_RTOL:.0e}); "
                   f"border row {last:.2e} (carries the multiplier)")


def test_criterion_08_evolver(bump_run):
    _, rec = bump_run
    chk = check_trajectory(rec)
    decreasing = rec.median[-1] < rec.median[0]
    ok = (chk["mass_drift"] < 1e-10 and chk["energy_drift"] < 1e-3 and chk["atom_strictly_increasing_once_positive"]
          and chk["median_nonincreasing"] and decreasing and rec.times[-1] == 10.0)
    _record(8, ok, f"mass drift {chk['mass_drift']:.2e} (<1e-10), energy drift {chk['energy_drift']:.2e} (<1e-3), "
                   f"atom strictly increasing={chk['atom_strictly_increasing_once_positive']}, median "
                   f"{rec.median[0]:.4f}->{rec.median[-1]:.4f} nonincreasing={chk['median_nonincreasing']}")


def test_criterion_09_self_similar_consistency(rho2_profile):
    sol = SelfSimilarSolution(2.0, 2.0 * rho2_profile.mass(), rho2_profile)
    rec = evolve(reconstruct(sol, 0.0), EvolverConfig(1.0, sample_times=(0.0, 1.0)))
    ref = reconstruct(sol, 1.0).tested_moments(rec.test_nodes)
    rel = float(np.max(np.abs(rec.tested[-1] / ref - 1)))
    ok = rel < 0.02
    _record(9, ok, f"max relative error over {rec.test_nodes.size} tested moments at t=1: {rel:.2e} (<2%)")


def test_criterion_10_monte_carlo():
    Z = (0.25, 0.5, 1.0, 2.0, 4.0)
    ts = (0.0, 0.25, 0.5, 1.0)
    t0 = time.perf_counter()
    mc = mc_run(bump_state(), EvolverConfig(1.0, sample_times=ts, test_nodes=Z, backend="monte-carlo",
                                            particles=10**5, replicas=16, seed=3))
    # matched initial data: the deterministic run starts from the very measure the particles sample
    det = evolve(bump_state(), EvolverConfig(1.0, sample_times=ts, test_nodes=Z))
    band = 3 * mc.tested_se + 1e-9 * np.max(np.abs(det.tested))
    dev = np.abs(mc.tested - det.tested)
    within = bool(np.all(dev <= band))
    worst_se = float(np.max(np.where(mc.tested_se > 0, dev / np.where(mc.tested_se > 0, mc.tested_se, 1), 0)))

    st = bump_state()
    ens = ParticleEnsemble.from_state(st, 10**5, seed=5)
    mart = mc_run(ens, EvolverConfig(1e9, sample_times=(0.0, 1e9), seed=1, max_events=10**5))
    sd = float(mart.info["energy_martingale_sd"][0, -1])
    e_dev = float(abs(mart.info["energy_runs"][0, -1] - mart.info["energy_runs"][0, 0]))
    secs = time.perf_counter() - t0
    counts = bool(np.all(mc.info["count_runs"] == 10**5) and np.all(mart.info["count_runs"] == ens.count)
                  and mart.final_state.count == ens.count)
    ok = counts and within and e_dev <= 3 * sd and int(mart.events[0]) == 10**5 and secs < 300
    _record(10, ok, f"counts conserved={counts}; size-sum change {e_dev:.3e} vs 3 SE {3 * sd:.3e} over "
                    f"{int(mart.events[0])} events; MC vs deterministic tested moments worst {worst_se:.2f} SE "
                    f"(band 3 SE), within={within}; {secs:.0f}s (<300s)")


def test_criterion_11_jacobian(rho2_tensors, rho2_profile):
    rng = np.random.default_rng(11)
    n = len(rho2_profile.grid)
    worst = 0.0
    for _ in range(20):
        c = rho2_profile.coeffs * rng.uniform(0.5, 1.5, n)
        v = rng.normal(size=n) * np.maximum(rho2_profile.coeffs, 1e-12)
        h = 1e-6
        fd = (residual(rho2_tensors, c + h * v) - residual(rho2_tensors, c - h * v)) / (2 * h)
        an = rho2_tensors.jacobian(c) @ v
        worst = max(worst, float(np.max(np.abs(fd - an)) / np.max(np.abs(an))))
    ok = worst < 1e-6
    _record(11, ok, f"max relative directional-derivative error at 20 random points: {worst:.2e} (<1e-6)")
