from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tests.conftest import random_psi
from tests.oracles import basis_spins, kron_hamiltonian
from tvmc_anneal.ansatz import log_amplitude
from tvmc_anneal.lattice import CouplingRealization, diamond_manifest, sample_couplings
from tvmc_anneal.model import ProblemHamiltonian, make_schedule
from tvmc_anneal.sampler import SamplerConfig, draw_sample_set, exhaustive_sample_set
from tvmc_anneal.tdvp import (
    SolverConfig,
    TdvpConfig,
    TdvpEngine,
    TdvpStepReport,
    estimate_sf,
    integrated_r2,
    solve_motion,
    tdvp_error,
    validation_error,
)


def tangent_oracle(psi, ham, t):
    """Normalized state, projected tangent vectors and H|psi> from dense algebra.

    Tangent vectors come from central finite differences of the enumerated
    log-amplitudes, so nothing here reuses the package's derivatives.
    """
    n = psi.n_sites
    s = basis_spins(n)
    theta = psi.to_vector()
    la = log_amplitude(psi, s)
    shift = la.real.max()
    amp = np.exp(la - shift)
    norm = np.linalg.norm(amp)
    v = amp / norm
    h = 1e-6
    tang = np.empty((len(v), len(theta)), complex)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        lp = log_amplitude(psi.with_vector(theta + e), s)
        lm = log_amplitude(psi.with_vector(theta - e), s)
        tang[:, k] = (np.exp(lp - shift) - np.exp(lm - shift)) / (2 * h) / norm
    proj = tang - np.outer(v, v.conj() @ tang)
    g, k = ham.coefficients(t)
    hm = kron_hamiltonian(n, ham.realization.lattice.edges, ham.realization.couplings, g, k)
    return v, proj, hm


@pytest.fixture
def small_ham():
    lat = diamond_manifest(8)
    return ProblemHamiltonian(sample_couplings(lat, 3), make_schedule("trigonometric", 7.0))


class TestEstimators:
    def test_s_and_f_match_dense_projection(self, small_ham, rng):
        psi = random_psi(8, (1, 2, 4), rng, scale=0.15)
        t = 3.0
        s, f = estimate_sf(exhaustive_sample_set(psi, small_ham, t))
        v, proj, hm = tangent_oracle(psi, small_ham, t)
        np.testing.assert_allclose(s.s, proj.conj().T @ proj, atol=1e-7)
        hv = hm @ v
        np.testing.assert_allclose(f.f, proj.conj().T @ hv, atol=1e-7)
        e = np.vdot(v, hv).real
        assert f.energy_mean.real == pytest.approx(e, abs=1e-10)
        assert f.energy_variance == pytest.approx(np.vdot(hv, hv).real - e**2, rel=1e-9)

    def test_r2_matches_dense_residual(self, small_ham, rng):
        psi = random_psi(8, (1, 2), rng, scale=0.2)
        t = 4.0
        s, f = estimate_sf(exhaustive_sample_set(psi, small_ham, t))
        td, _ = solve_motion(s, f)
        r2, ok = tdvp_error(td, s, f)
        v, proj, hm = tangent_oracle(psi, small_ham, t)
        hv = hm @ v
        resid = proj @ td + 1j * (hv - np.vdot(v, hv) * v)
        assert ok
        assert r2 == pytest.approx(np.vdot(resid, resid).real / f.energy_variance, abs=1e-6)

    def test_monte_carlo_s_hermitian_psd(self, small_ham, rng):
        psi = random_psi(8, (1, 2, 4), rng, scale=0.2)
        ss, _ = draw_sample_set(psi, small_ham, 2.0, SamplerConfig(n_chains=16, samples_per_chain=8))
        s, _ = estimate_sf(ss)
        np.testing.assert_array_equal(s.s, s.s.conj().T)
        assert np.linalg.eigvalsh(s.s)[0] > -1e-12

    @given(seed=st.integers(0, 2**31), t=st.floats(0.1, 6.9))
    def test_r2_nonnegative_for_consistent_sets(self, seed, t):
        rng = np.random.default_rng(seed)
        ham = ProblemHamiltonian(sample_couplings(diamond_manifest(8), seed),
                                 make_schedule("trigonometric", 7.0))
        psi = random_psi(8, (1, 2, 4), rng, scale=0.3)
        s, f = estimate_sf(exhaustive_sample_set(psi, ham, t))
        td, _ = solve_motion(s, f)
        r2, ok = tdvp_error(td, s, f)
        assert not ok or r2 >= 0.0


class TestSolve:
    def test_diagonal_system(self):
        s = np.diag([2.0, 4.0])
        f = np.array([1.0, 2.0 + 1j])
        td, info = solve_motion(s, f, SolverConfig(rcond=1e-8, shift=0.0))
        np.testing.assert_allclose(td, -1j * f / np.array([2.0, 4.0]))
        assert info.retained_rank == 2 and info.min_eigenvalue == 2.0

    def test_force_in_null_space_gives_zero(self):
        s = np.diag([1.0, 0.0])
        td, info = solve_motion(s, np.array([0.0, 3.0]))
        np.testing.assert_allclose(td, 0.0)
        assert info.retained_rank == 1

    def test_all_below_cutoff(self):
        td, info = solve_motion(np.zeros((3, 3)), np.ones(3))
        assert np.all(td == 0) and info.retained_rank == 0 and info.warning

    def test_shift_is_relative_to_mean_diagonal(self):
        s = np.diag([1.0, 3.0])
        _, info = solve_motion(s, np.ones(2), SolverConfig(shift=1e-3))
        assert info.shift == pytest.approx(2e-3)

    def test_default_shift_follows_estimator(self):
        from tvmc_anneal.tdvp import SHIFT_EXACT, SHIFT_SAMPLED

        assert SolverConfig().resolved("exhaustive").shift == SHIFT_EXACT
        assert SolverConfig().resolved("pt").shift == SHIFT_SAMPLED
        assert SolverConfig(shift=0.5).resolved("standard").shift == 0.5
        _, info = solve_motion(np.eye(2), np.ones(2))
        assert info.shift == pytest.approx(SHIFT_EXACT)

    def test_non_finite_raises(self):
        with pytest.raises(FloatingPointError):
            solve_motion(np.array([[np.nan]]), np.ones(1))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            solve_motion(np.eye(2), np.ones(3))

    def test_large_negative_r2_raises(self):
        with pytest.raises(FloatingPointError):
            tdvp_error(np.array([1.0]), np.eye(1), np.array([10j]), delta_e2=1.0, energy_mean=1.0)

    def test_small_variance_flagged(self):
        r2, ok = tdvp_error(np.zeros(1), np.eye(1), np.zeros(1), delta_e2=1e-30, energy_mean=-4.0)
        assert not ok and np.isnan(r2)


class TestDynamics:
    def test_pair_is_exact_throughout(self, pair_lattice):
        real = CouplingRealization(pair_lattice, np.array([0.45]), seed=0)
        ham = ProblemHamiltonian(real, make_schedule("trigonometric", 7.0))
        # no regularization: the two-site ansatz is complete, so S is invertible
        cfg = TdvpConfig(n_steps=100, integrator="rk4", sampler=SamplerConfig(kind="exhaustive"),
                         solver=SolverConfig(shift=0.0))
        from tvmc_anneal.ansatz import init_driving_ground

        psi = init_driving_ground(2, (1, 2))
        engine = TdvpEngine(ham, cfg)
        reps = []
        for k in range(cfg.n_steps):
            psi, r = engine.step(psi, k * cfg.dt)
            reps.append(r)
        assert max(r.r2 for r in reps if not r.r2_flagged) < 1e-10
        from tvmc_anneal.exact import enumerate_variational_state, zz_correlations

        c = zz_correlations(enumerate_variational_state(psi))[0, 1]
        # adaptive DOP853 on the explicit 4x4 matrix
        assert c == pytest.approx(-0.974423172186937, abs=1e-5)

    @pytest.mark.parametrize("integrator", ["heun", "rk4"])
    def test_energy_conserved_with_frozen_schedule(self, integrator, rng):
        ham = ProblemHamiltonian(sample_couplings(diamond_manifest(8), 1),
                                 make_schedule("constant", 1.0, gamma=1.0, kappa=1.0))
        psi = random_psi(8, (1, 2, 4), rng, scale=0.1)
        cfg = TdvpConfig(total_time=1.0, n_steps=100, integrator=integrator, validation_every=0,
                         sampler=SamplerConfig(kind="exhaustive"))
        engine = TdvpEngine(ham, cfg)
        e0 = estimate_sf(exhaustive_sample_set(psi, ham, 0.0))[1].energy_mean.real
        for k in range(cfg.n_steps):
            psi, _ = engine.step(psi, k * cfg.dt)
        e1 = estimate_sf(exhaustive_sample_set(psi, ham, 1.0))[1].energy_mean.real
        # Hermitian regularization conserves energy; only the integrator drifts
        tol = 1e-6 * 8 if integrator == "rk4" else 5e-3 * 8
        assert abs(e1 - e0) < tol

    def test_engine_deterministic(self, small_ham, rng):
        psi0 = random_psi(8, (1, 2, 4), rng, scale=0.1)
        cfg = TdvpConfig(n_steps=20, sampler=SamplerConfig(n_chains=8, samples_per_chain=4))

        def run():
            eng = TdvpEngine(small_ham, cfg, seed=11)
            psi, out = psi0, []
            for k in range(3):
                psi, r = eng.step(psi, k * cfg.dt)
                d = r.to_dict()
                d.pop("wall_time")
                out.append(json.dumps(d))
            return out, psi.to_vector()

        a, pa = run()
        b, pb = run()
        assert a == b
        np.testing.assert_array_equal(pa, pb)

    def test_overshoot_rejected(self, small_ham, rng):
        cfg = TdvpConfig(n_steps=10, sampler=SamplerConfig(kind="exhaustive"))
        with pytest.raises(ValueError):
            TdvpEngine(small_ham, cfg).step(random_psi(8, (1, 2), rng), 6.9)

    def test_validation_equals_r2_when_exhaustive(self, small_ham, rng):
        psi = random_psi(8, (1, 2), rng, scale=0.2)
        ss = exhaustive_sample_set(psi, small_ham, 2.5)
        s, f = estimate_sf(ss)
        td, _ = solve_motion(s, f)
        r2, _ = tdvp_error(td, s, f)
        val, _ = validation_error(td, exhaustive_sample_set(psi, small_ham, 2.5))
        assert abs(val - r2) < 1e-10

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TdvpConfig(integrator="leapfrog")
        with pytest.raises(ValueError):
            TdvpConfig(n_steps=0)


class TestIntegratedR2:
    @staticmethod
    def _reports(ts, vals):
        return [{"t": t, "r2": v} for t, v in zip(ts, vals)]

    def test_constant(self):
        res = integrated_r2(self._reports([0, 1, 2], [0.5, 0.5, 0.5]), total_time=3.0)
        assert res.value == pytest.approx(1.5) and res.reliable

    def test_trapezoid(self):
        res = integrated_r2(self._reports([0, 1, 2], [0.0, 1.0, 0.0]))
        assert res.value == pytest.approx(1.0)

    def test_flagged_interpolated(self):
        res = integrated_r2(self._reports([0, 1, 2], [1.0, float("nan"), 3.0]))
        assert res.value == pytest.approx(4.0) and res.n_flagged == 1 and not res.reliable

    def test_unordered_rejected(self):
        with pytest.raises(ValueError):
            integrated_r2(self._reports([0, 2, 1], [0, 0, 0]))

    def test_empty(self):
        assert integrated_r2([]).value is None

    def test_report_serializes_complex_energy(self):
        r = TdvpStepReport(0, 0.0, 1.0, 0.1, False, None, -1 + 2j, 0.0, 1.0, 0.5, float("nan"),
                           3, 3, 0.0, 0.0, 0.0, 0.0, 0.1, 0, 0.01)
        assert r.to_dict()["energy"] == [-1.0, 2.0]


def ring(n: int):
    from tvmc_anneal.lattice import Lattice

    edges = tuple((i, i + 1) for i in range(n - 1)) + ((0, n - 1),)
    return Lattice(n, edges, geometry_tag="ring")


class TestSpecialCases:
    def test_constant_column_gives_zero_row(self, rng):
        from tvmc_anneal.sampler import SampleSet

        m = 50
        d = rng.normal(size=(m, 3)) + 1j * rng.normal(size=(m, 3))
        d[:, 1] = 0.7 - 0.2j
        ss = SampleSet(np.ones((m, 2), np.int8), np.zeros(m, complex),
                       rng.normal(size=m) + 0j, d, np.arange(m) % 5)
        s, f = estimate_sf(ss)
        # zero up to the rounding of the column mean
        assert np.abs(s.s[1]).max() < 1e-15 and np.abs(s.s[:, 1]).max() < 1e-15
        assert abs(f.f[1]) < 1e-15

    def test_driving_ground_state_has_zero_force(self):
        from tvmc_anneal.ansatz import init_driving_ground

        ham = ProblemHamiltonian(sample_couplings(diamond_manifest(8), 0),
                                 make_schedule("constant", 1.0, gamma=1.0, kappa=0.0))
        s, f = estimate_sf(exhaustive_sample_set(init_driving_ground(8, (1, 2, 4)), ham, 0.0))
        assert np.max(np.abs(f.f)) < 1e-13
        assert abs(f.energy_variance) < 1e-12
        assert f.energy_mean.real == pytest.approx(-8.0, abs=1e-12)

    def test_norm_shift_changes_nothing(self, small_ham, rng):
        import dataclasses

        psi = random_psi(8, (1, 2), rng, scale=0.2)
        ss = exhaustive_sample_set(psi, small_ham, 3.0)
        shifted = dataclasses.replace(ss, log_amplitudes=ss.log_amplitudes + 3.0 - 2.0j)
        (s1, f1), (s2, f2) = estimate_sf(ss), estimate_sf(shifted)
        np.testing.assert_array_equal(s1.s, s2.s)
        np.testing.assert_array_equal(f1.f, f2.f)

    def test_monte_carlo_sf_within_standard_errors(self):
        lat = ring(6)
        real = sample_couplings(lat, 2)
        ham = ProblemHamiltonian(real, make_schedule("trigonometric", 7.0))
        psi = random_psi(6, (1, 2), np.random.default_rng(8), scale=0.25)
        t = 3.5
        s_ex, f_ex = estimate_sf(exhaustive_sample_set(psi, ham, t))
        ss, _ = draw_sample_set(psi, ham, t, SamplerConfig(n_chains=250, samples_per_chain=400),
                                master_seed=3)
        assert ss.n_samples == 100_000
        s_mc, f_mc = estimate_sf(ss)
        # standard errors from 50 batches of whole chains
        batches = ss.chain_ids % 50
        sb, fb = [], []
        for b in range(50):
            keep = batches == b
            sub = type(ss)(ss.configurations[keep], ss.log_amplitudes[keep],
                           ss.local_energies[keep], ss.log_derivatives[keep], ss.chain_ids[keep])
            x, y = estimate_sf(sub)
            sb.append(x.s)
            fb.append(y.f)
        se_s = np.std(np.array(sb), axis=0) / np.sqrt(50)
        se_f = np.std(np.array(fb), axis=0) / np.sqrt(50)
        zs = np.abs(s_mc.s - s_ex.s) / np.maximum(se_s, 1e-12)
        zf = np.abs(f_mc.f - f_ex.f) / np.maximum(se_f, 1e-12)
        iu = np.triu_indices(s_ex.s.shape[0])
        z = np.concatenate([zs[iu], zf])
        # 3 SE per entry; with ~250 entries a handful of 3-sigma excursions is expected
        assert np.mean(z <= 3.0) >= 0.98
        assert z.max() < 5.0


class TestSolveExamples:
    def test_identity_system(self):
        v = np.array([0.3, -1.2, 2.0])
        td, _ = solve_motion(np.eye(3), -1j * v, SolverConfig(shift=0.0))
        np.testing.assert_allclose(td, -v, atol=1e-15)

    def test_rank_deficient_matches_least_squares(self, rng):
        a = rng.normal(size=(20, 12)) + 1j * rng.normal(size=(20, 12))
        s = a @ a.conj().T
        f = rng.normal(size=20) + 1j * rng.normal(size=20)
        td, info = solve_motion(s, f, SolverConfig(rcond=1e-8, shift=0.0))
        ref = np.linalg.lstsq(s, -1j * f, rcond=1e-8)[0]
        assert info.retained_rank == 12
        r_ours = np.linalg.norm(s @ td + 1j * f)
        r_ref = np.linalg.norm(s @ ref + 1j * f)
        assert abs(r_ours - r_ref) < 1e-8
        np.testing.assert_allclose(td, ref, atol=1e-8)

    def test_one_parameter_exact_solution(self):
        r2, ok = tdvp_error(np.array([-1.0 + 0j]), np.eye(1), np.array([-1j]), delta_e2=1.0,
                            energy_mean=0.0)
        assert ok and r2 == pytest.approx(0.0, abs=1e-15)

    def test_no_motion_gives_one(self, rng):
        s = np.eye(2)
        f = rng.normal(size=2) + 1j * rng.normal(size=2)
        r2, _ = tdvp_error(np.zeros(2), s, f, delta_e2=2.0, energy_mean=1.0)
        assert r2 == 1.0

    def test_validation_without_motion_gives_one(self, small_ham, rng):
        psi = random_psi(8, (1, 2), rng, scale=0.2)
        ss, _ = draw_sample_set(psi, small_ham, 2.0, SamplerConfig(n_chains=8, samples_per_chain=8))
        val, ok = validation_error(np.zeros(psi.n_params, complex), ss)
        assert ok and val == pytest.approx(1.0, abs=1e-12)


class TestDynamicsExamples:
    def test_diagonal_hamiltonian_keeps_correlations(self, rng):
        ham = ProblemHamiltonian(sample_couplings(diamond_manifest(8), 5),
                                 make_schedule("constant", 2.0, gamma=0.0, kappa=1.0))
        psi = random_psi(8, (1, 2, 4), rng, scale=0.2)
        from tvmc_anneal.exact import enumerate_variational_state, zz_correlations

        c0 = zz_correlations(enumerate_variational_state(psi))
        # no shift: the diagonal shift alone would leak into Re(theta_dot)
        cfg = TdvpConfig(total_time=2.0, n_steps=20, validation_every=0,
                         sampler=SamplerConfig(kind="exhaustive"), solver=SolverConfig(shift=0.0))
        eng = TdvpEngine(ham, cfg)
        for k in range(cfg.n_steps):
            psi, _ = eng.step(psi, k * cfg.dt)
        np.testing.assert_allclose(zz_correlations(enumerate_variational_state(psi)), c0, atol=1e-9)

    def test_single_spin_precession(self):
        from tvmc_anneal.lattice import CouplingRealization, Lattice
        from tvmc_anneal.ansatz import JastrowParameters

        real = CouplingRealization(Lattice(1, ()), np.zeros(0), seed=0)
        ham = ProblemHamiltonian(real, make_schedule("constant", 2.0, gamma=1.0, kappa=0.0))
        w = 0.4
        psi = JastrowParameters(1, np.array([w]), np.zeros((1, 1)), active_orders=(1,))
        cfg = TdvpConfig(total_time=2.0, n_steps=200, integrator="rk4", validation_every=0,
                         sampler=SamplerConfig(kind="exhaustive"), solver=SolverConfig(shift=0.0))
        eng = TdvpEngine(ham, cfg)
        for k in range(cfg.n_steps):
            psi, _ = eng.step(psi, k * cfg.dt)
            t = (k + 1) * cfg.dt
            if (k + 1) % 20 == 0:
                la = log_amplitude(psi, np.array([[1], [-1]], np.int8))
                p = np.abs(np.exp(la - la.real.max())) ** 2
                z = (p[0] - p[1]) / p.sum()
                # H = -X: <Z(t)> = <Z(0)> cos 2t for a real initial state
                assert z == pytest.approx(np.tanh(2 * w) * np.cos(2 * t), abs=1e-4)

    def test_halving_dt_is_second_order(self):
        from tvmc_anneal.exact import enumerate_variational_state, zz_correlations

        ham = ProblemHamiltonian(sample_couplings(ring(4), 1), make_schedule("trigonometric", 7.0))

        def final(n_steps):
            from tvmc_anneal.ansatz import init_driving_ground, perturb_factors

            psi = perturb_factors(init_driving_ground(4, (1, 2, 4)), 0.02, np.random.default_rng(0))
            cfg = TdvpConfig(n_steps=n_steps, validation_every=0,
                             sampler=SamplerConfig(kind="exhaustive"))
            eng = TdvpEngine(ham, cfg)
            for k in range(n_steps):
                psi, _ = eng.step(psi, k * cfg.dt)
            return zz_correlations(enumerate_variational_state(psi))

        # the converged t-VMC trajectory, not the oracle, isolates the
        # integrator error from the (dt-independent) variational error
        ref = final(1600)
        e1 = np.abs(final(50) - ref).max()
        e2 = np.abs(final(100) - ref).max()
        assert e1 / e2 >= 3.0


class TestIntegratedR2Examples:
    def test_linear(self):
        ts = np.linspace(0, 7.0, 101)
        reps = [{"t": t, "r2": t / 7.0} for t in ts[:-1]]
        res = integrated_r2(reps, total_time=7.0)
        assert res.value == pytest.approx(3.5, abs=(ts[1] - ts[0]) ** 2)

    def test_all_flagged(self):
        res = integrated_r2([{"t": 0.0, "r2": float("nan")}, {"t": 1.0, "r2": None}])
        assert res.value is None and not res.reliable
