import numpy as np
import pytest

from privgen import sampler as hmc
from privgen import scoremodel as sm


def gaussian_score(u):
    return -u


def gaussian_potential(u):
    if u.ndim == 1:
        return 0.5 * np.sum(u**2)
    return 0.5 * np.sum(u**2, axis=1)


class TestStepSize:
    def cfg(self, lam0=1e-5, m_outer=1000):
        return hmc.SamplerConfig(lambda0=lam0, outer_iterations=m_outer)

    def test_final_step_is_lambda0(self):
        cfg = self.cfg(lam0=0.3, m_outer=40)
        assert hmc.step_size(40, cfg) == pytest.approx(0.3)

    def test_halfway_is_four_lambda0(self):
        cfg = self.cfg(lam0=0.5, m_outer=100)
        assert hmc.step_size(50, cfg) == pytest.approx(2.0)

    def test_early_steps_are_aggressive(self):
        cfg = self.cfg(lam0=1e-5, m_outer=1000)
        assert hmc.step_size(1, cfg) == pytest.approx(10.0)

    def test_strictly_decreasing(self):
        cfg = self.cfg(lam0=1e-3, m_outer=64)
        vals = [hmc.step_size(m, cfg) for m in range(1, 65)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_zero_index_rejected(self):
        with pytest.raises(ValueError):
            hmc.step_size(0, self.cfg())

    def test_clamped_variant_is_available_but_off_by_default(self):
        cfg = hmc.SamplerConfig(lambda0=1e-5, outer_iterations=1000, max_step_multiplier=100.0)
        assert hmc.step_size(1, cfg) == pytest.approx(1e-3)
        assert self.cfg().max_step_multiplier is None


class TestMomentum:
    def test_gaussian_moments(self):
        rng = np.random.default_rng(0)
        draws = np.concatenate([hmc.refresh_momentum(10, hmc.KineticSpec("gaussian"), rng)
                                for _ in range(10**4)])
        n = draws.size
        assert abs(draws.mean()) < 3 / np.sqrt(n)
        assert abs(draws.var() - 1.0) < 3 * np.sqrt(2 / n)

    def test_rayleigh_mean(self):
        rng = np.random.default_rng(1)
        draws = hmc._refresh((10**5,), hmc.KineticSpec("rayleigh", (1.0,)), rng)
        mean = np.sqrt(np.pi / 2)
        sd = np.sqrt((4 - np.pi) / 2)
        assert abs(draws.mean() - mean) < 3 * sd / np.sqrt(draws.size)

    def test_uniform_support(self):
        rng = np.random.default_rng(2)
        draws = hmc._refresh((10**4,), hmc.KineticSpec("uniform", (-1.0, 1.0)), rng)
        assert draws.min() >= -1.0 and draws.max() <= 1.0

    def test_parse_spec_strings(self):
        assert hmc.KineticSpec.parse("gaussian") == hmc.KineticSpec("gaussian")
        assert hmc.KineticSpec.parse("rayleigh(2.5)") == hmc.KineticSpec("rayleigh", (2.5,))
        assert hmc.KineticSpec.parse("uniform(-1, 1)") == hmc.KineticSpec("uniform", (-1.0, 1.0))
        with pytest.raises(ValueError):
            hmc.KineticSpec.parse("cauchy")


class TestLeapfrog:
    def test_hand_computed_step(self):
        state = hmc.HamiltonianState(u=np.array([1.0]), p=np.array([0.0]))
        out = hmc.leapfrog(state, gaussian_score, 0.1)
        assert out.u[0] == pytest.approx(0.995, abs=1e-12)
        assert out.p[0] == pytest.approx(-0.09975, abs=1e-12)

    def test_free_flight_when_score_is_zero(self):
        state = hmc.HamiltonianState(u=np.array([0.4, -0.2]), p=np.array([1.0, 2.0]))
        out = hmc.leapfrog(state, lambda u: np.zeros_like(u), 0.5)
        assert np.allclose(out.u, state.u + 0.5 * state.p)
        assert np.array_equal(out.p, state.p)

    def test_time_reversibility(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            state = hmc.HamiltonianState(u=rng.normal(size=3), p=rng.normal(size=3))
            fwd = hmc.leapfrog(state, gaussian_score, 0.2)
            back = hmc.leapfrog(
                hmc.HamiltonianState(u=fwd.u, p=-fwd.p), gaussian_score, 0.2
            )
            assert np.max(np.abs(back.u - state.u)) < 1e-10
            assert np.max(np.abs(back.p + state.p)) < 1e-10

    def test_energy_error_scales_cubically(self):
        rng = np.random.default_rng(9)
        us = rng.normal(size=(10**4, 1))
        ps = rng.normal(size=(10**4, 1))

        def mean_abs_dh(lam):
            errs = []
            for u, p in zip(us, ps):
                state = hmc.HamiltonianState(u=u, p=p)
                out = hmc.leapfrog(state, gaussian_score, lam)
                h0 = gaussian_potential(u) + 0.5 * p @ p
                h1 = gaussian_potential(out.u) + 0.5 * out.p @ out.p
                errs.append(abs(h1 - h0))
            return np.mean(errs)

        ratio = mean_abs_dh(0.1) / mean_abs_dh(0.05)
        assert 6.0 <= ratio <= 10.0

    def test_divergent_state_reports_indices(self):
        state = hmc.HamiltonianState(u=np.array([1e300]), p=np.array([1e300]), m=4)
        with pytest.raises(hmc.SamplerDivergence) as exc:
            hmc.leapfrog(state, lambda u: u * 1e300, 1.0)
        assert exc.value.outer == 4


class TestMetropolis:
    def test_zero_delta_always_accepts(self):
        s = hmc.HamiltonianState(u=np.zeros(1), p=np.zeros(1))
        rng = np.random.default_rng(0)
        assert all(
            hmc.metropolis_accept(s, s, lambda a, b: 0.0, rng) for _ in range(100)
        )

    def test_energy_decrease_always_accepts(self):
        s = hmc.HamiltonianState(u=np.zeros(1), p=np.zeros(1))
        rng = np.random.default_rng(1)
        assert all(
            hmc.metropolis_accept(s, s, lambda a, b: -1.0, rng) for _ in range(100)
        )

    def test_unit_penalty_accept_rate(self):
        s = hmc.HamiltonianState(u=np.zeros(1), p=np.zeros(1))
        rng = np.random.default_rng(2)
        n = 10**5
        hits = sum(hmc.metropolis_accept(s, s, lambda a, b: 1.0, rng) for _ in range(n))
        p = np.exp(-1.0)
        assert abs(hits / n - p) < 3 * np.sqrt(p * (1 - p) / n)

    def test_estimator_failure_rejects_and_counts(self):
        s = hmc.HamiltonianState(u=np.zeros(1), p=np.zeros(1))
        stats = hmc.ChainStats()

        def broken(a, b):
            raise RuntimeError("no energy here")

        assert not hmc.metropolis_accept(s, s, broken, np.random.default_rng(0), stats)
        assert stats.estimator_warnings == 1
        assert stats.rejected == 1

    def test_exact_energy_estimator(self):
        old = hmc.HamiltonianState(u=np.zeros(2), p=np.zeros(2))
        new = hmc.HamiltonianState(u=np.array([1.0, 0.0]), p=np.array([0.0, 1.0]))
        est = hmc.exact_energy_estimator(gaussian_potential)
        assert est(old, new) == pytest.approx(1.0)

    def test_accept_rate_monotone_as_step_shrinks(self):
        rates = []
        for lam in (0.8, 0.4, 0.2, 0.1):
            stats = hmc.ChainStats()
            # clamp the decay so every outer iteration runs at fixed lam
            cfg = hmc.SamplerConfig(
                lambda0=lam, outer_iterations=50, leapfrog_steps=5,
                metropolis="exact_energy", energy_fn=gaussian_potential,
                n_chains=64, max_step_multiplier=1.0, seed=12,
            )
            hmc.sample_chains(gaussian_score, 2, cfg, np.random.default_rng(12), stats)
            rates.append(stats.accepted / (stats.accepted + stats.rejected))
        assert all(a <= b + 1e-9 for a, b in zip(rates, rates[1:]))
        assert rates[-1] > 0.98


class TestPathIntegral:
    def test_quadratic_potential_value(self):
        dq = hmc.estimate_delta_potential_path(
            gaussian_score, np.zeros(2), np.array([1.0, 0.0]), steps=10**4
        )
        assert dq == pytest.approx(0.5, abs=1e-6)

    def test_no_move_is_zero(self):
        u = np.array([0.3, 0.4])
        assert hmc.estimate_delta_potential_path(gaussian_score, u, u, 100) == 0.0

    def test_antisymmetry_under_reversal(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=2), rng.normal(size=2)

        def score(u):
            return -u + 0.3 * np.tanh(u)

        fwd = hmc.estimate_delta_potential_path(score, a, b, 500)
        back = hmc.estimate_delta_potential_path(score, b, a, 500)
        assert fwd == pytest.approx(-back, rel=1e-12)


class TestChains:
    def test_zero_score_zero_momentum_never_moves(self):
        cfg = hmc.SamplerConfig(
            lambda0=0.5, outer_iterations=5, leapfrog_steps=4,
            kinetic=hmc.KineticSpec("uniform", (0.0, 1e-300)), n_chains=3, seed=0,
        )
        rng = np.random.default_rng(0)
        out = hmc.sample_chains(lambda u: np.zeros_like(u), 2, cfg, rng)
        assert np.max(np.abs(out)) < 1.0 + 1e-9  # still inside the init box

    def test_gaussian_target_small(self):
        cfg = hmc.SamplerConfig(
            lambda0=0.01, outer_iterations=10, leapfrog_steps=100, n_chains=400, seed=3,
        )
        out = hmc.sample_chains(gaussian_score, 2, cfg, np.random.default_rng(3))
        assert np.max(np.abs(out.mean(axis=0))) < 0.15
        assert np.max(np.abs(np.cov(out.T) - np.eye(2))) < 0.3

    def test_run_chain_wraps_embedded_samples(self):
        e = sm.make_embedding(2, embed_dim=4, seed=0)
        spec = sm.MLPSpec(input_dim=6, hidden_dims=(), seed=1)
        params = sm.Params(layers=((-np.eye(6), np.zeros(6)),))
        cfg = hmc.SamplerConfig(lambda0=0.05, outer_iterations=8, leapfrog_steps=20,
                                n_chains=16, seed=5)
        samples = hmc.run_chain(params, e, cfg, dim=6, rng=np.random.default_rng(5))
        assert len(samples) == 16
        assert samples[0].feature_dim == 2 and samples[0].embed_dim == 4

    def test_thinned_trajectory_shape(self):
        cfg = hmc.SamplerConfig(lambda0=0.05, outer_iterations=12, leapfrog_steps=5,
                                n_chains=7, seed=2)
        end, traj = hmc.sample_chains(gaussian_score, 3, cfg,
                                      np.random.default_rng(2), trajectory_every=4)
        assert traj.shape == (3, 7, 3)
        assert np.array_equal(traj[-1], end)

    def test_divergence_reports_outer_and_inner(self):
        cfg = hmc.SamplerConfig(lambda0=1.0, outer_iterations=3, leapfrog_steps=4,
                                n_chains=2, seed=0)
        with pytest.raises(hmc.SamplerDivergence) as exc:
            hmc.sample_chains(lambda u: u * 1e155, 2, cfg, np.random.default_rng(0))
        assert exc.value.outer >= 1 and exc.value.inner >= 1
