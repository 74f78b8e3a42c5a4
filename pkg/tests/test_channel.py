import json
import math

import numpy as np
import pytest

from beamsense.channel import (BeamAction, ChannelConfig, ConfigError, StateVector, analytic_feedback,
                               detection_statistics, gaussian_codeword_md, load_config, p_fa, p_md,
                               sample_state, save_config, true_alignment, waveform_feedback,
                               waveform_feedback_batch)


def within(p_hat, p, n, k=3.0):
    return abs(p_hat - p) <= k * math.sqrt(max(p * (1 - p), 1e-12) / n)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(M=1), dict(M=4, q=0), dict(M=4, Q=0), dict(M=4, nu=-1.0),
                                    dict(M=4, B=-0.5), dict(M=4, B=math.inf),
                                    dict(M=4, fixed_error_rates=(1.2, 0.0))])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ChannelConfig(**{"nu": 10.0, **kw})

    def test_warns_when_false_alarm_large(self):
        with pytest.warns(UserWarning, match="false-alarm"):
            ChannelConfig(M=4, q=2, nu=1.0)

    def test_budget(self):
        assert ChannelConfig(M=4, q=3, nu=10.0, B=2.5).budget == 7.5

    def test_round_trip(self, tmp_path):
        cfg = ChannelConfig(M=8, q=2, Q=3, nu=4.5, B=2.0)
        path = tmp_path / "cfg.json"
        save_config(cfg, path, seed=17)
        back, seed = load_config(path)
        assert back == cfg and seed == 17
        assert json.loads(path.read_text())["M"] == 8


class TestDetectorFormulas:
    def test_fa_closed_forms(self):
        assert p_fa(1, 0.0) == 1.0
        assert p_fa(2, 4.0) == pytest.approx(3 * math.exp(-2), abs=1e-14)

    def test_md_zero_power_is_complement(self):
        for q, nu in [(1, 2.0), (2, 4.0), (8, 18.0)]:
            assert p_md(q, nu, 0.0) == pytest.approx(1 - p_fa(q, nu), abs=1e-15)

    def test_md_huge_power(self):
        assert p_md(2, 4.0, 1e4) < 1e-9

    def test_fa_large_q_monte_carlo(self):
        rng = np.random.default_rng(3)
        n, hits = 0, 0
        for _ in range(10):
            d = detection_statistics(0.0, "pilot", 100, 100_000, rng)
            hits += int(np.count_nonzero(d > 230.0))
            n += 100_000
        assert within(hits / n, p_fa(100, 230.0), n)

    def test_md_monte_carlo(self):
        rng = np.random.default_rng(4)
        n = 1_000_000
        d = detection_statistics(6.0, "pilot", 2, n, rng)
        assert within(float(np.mean(d <= 4.0)), p_md(2, 4.0, 6.0), n)

    def test_gaussian_codeword_exact_md(self):
        rng = np.random.default_rng(5)
        n = 500_000
        d = detection_statistics(6.0, "gaussian_codeword", 2, n, rng)
        assert within(float(np.mean(d <= 4.0)), gaussian_codeword_md(2, 4.0, 6.0), n)


class TestSampling:
    def test_state_uniform(self):
        cfg = ChannelConfig(M=4, nu=10.0)
        rng = np.random.default_rng(6)
        draws = rng.integers(cfg.M, size=1_000_000)   # same primitive as sample_state
        counts = np.bincount(draws, minlength=4)
        assert all(within(c / 1e6, 0.25, 1_000_000) for c in counts)
        seen = {sample_state(cfg, rng).aod_index for _ in range(200)}
        assert seen == {0, 1, 2, 3}

    def test_state_deterministic(self):
        cfg = ChannelConfig(M=16, nu=10.0)
        a = sample_state(cfg, np.random.default_rng(9))
        b = sample_state(cfg, np.random.default_rng(9))
        assert a == b

    def test_alignment(self):
        a = BeamAction((0.0, 3.0, 0.0, 0.0))
        assert true_alignment(StateVector(1), a) == 1
        assert true_alignment(StateVector(0), a) == 0
        assert true_alignment(StateVector(1), BeamAction.zeros(4)) == 0

    def test_action_validation(self):
        with pytest.raises(ValueError):
            BeamAction((1.0, -0.1))
        a = BeamAction.uniform(4, [0, 2], 1.5)
        assert a.cost == 3.0 and a.support == (0, 2)


class TestFeedback:
    cfg = ChannelConfig(M=4, q=2, nu=4.0, B=3.0)

    def test_analytic_false_alarm_rate(self):
        rng = np.random.default_rng(7)
        n = 200_000
        z = sum(analytic_feedback(0, 0.0, self.cfg, rng) for _ in range(n))
        assert within(z / n, self.cfg.false_alarm(), n)

    def test_analytic_requires_power_when_aligned(self):
        with pytest.raises(ValueError):
            analytic_feedback(1, 0.0, self.cfg, np.random.default_rng(0))

    def test_analytic_strong_signal(self):
        rng = np.random.default_rng(8)
        assert all(analytic_feedback(1, 1e4, self.cfg, rng) == 1 for _ in range(100_000))

    def test_waveform_zero_action(self):
        rng = np.random.default_rng(10)
        n = 20_000
        z = [waveform_feedback(StateVector(0), BeamAction.zeros(4), "pilot", self.cfg, rng)[0] for _ in range(n)]
        assert within(float(np.mean(z)), self.cfg.false_alarm(), n)

    def test_waveform_aligned_pilot(self):
        rng = np.random.default_rng(11)
        n = 20_000
        a = BeamAction((6.0, 0.0, 0.0, 0.0))
        out = [waveform_feedback(StateVector(0), a, "pilot", self.cfg, rng) for _ in range(n)]
        z = np.array([o[0] for o in out])
        d = np.array([o[1] for o in out])
        assert np.array_equal(z, (d > self.cfg.nu).astype(int))
        assert within(float(np.mean(z == 0)), self.cfg.miss(6.0), n)

    def test_waveform_batch_mixed_states(self):
        # beams 0 and 2 probed with different powers; state 3 sees only noise
        rng = np.random.default_rng(12)
        n = 30_000
        a = BeamAction((4.0, 0.0, 7.0, 0.0))
        states = np.repeat([0, 2, 3], n)
        z, d = waveform_feedback_batch(states, a, "pilot", self.cfg, rng)
        assert np.array_equal(z, (d > self.cfg.nu).astype(int))
        assert within(float(np.mean(z[:n] == 0)), self.cfg.miss(4.0), n)
        assert within(float(np.mean(z[n:2 * n] == 0)), self.cfg.miss(7.0), n)
        assert within(float(np.mean(z[2 * n:])), self.cfg.false_alarm(), n)

    def test_waveform_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            waveform_feedback(StateVector(0), BeamAction.zeros(4), "chirp", self.cfg, np.random.default_rng(0))
