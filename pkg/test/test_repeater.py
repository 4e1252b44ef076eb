import math

import pytest
import numpy as np

from ionlink.purify import BellDiagonalTuple, NoiseModel, run_level, werner
from ionlink.qcore import bell_fidelity, bell_weights, make_bell, zero_state
from ionlink.repeater import (ChainStageReport, LinkBudget, PipelineConfig, chain_reach_km, dephasing_window, fuse,
                              fuse_chain, memory_budget, pipeline, rate_budget, steer_errors, steering_word)


class TestFusion:
    """Entanglement swapping at a middle node"""

    @pytest.mark.parametrize("i", range(4))
    @pytest.mark.parametrize("j", range(4))
    def test_bell_label_algebra(self, i, j, noiseless):
        out = fuse(make_bell(i), make_bell(j), noiseless)
        expected = np.zeros(4)
        expected[i ^ j] = 1
        assert out.trace == pytest.approx(1.0)
        assert np.allclose(bell_weights(out), expected, atol=1e-12)

    def test_gate_noise_lowers_fidelity(self):
        noise = NoiseModel(p1=1e-4, p2=1e-3, pm=5e-4)
        out = fuse(make_bell(0), make_bell(0), noise)
        assert 0.99 < bell_fidelity(out) < 1.0

    def test_chain_fidelity_decreases(self, noiseless):
        pair = werner(0.01)
        fidelities = [bell_fidelity(pair)] + [bell_fidelity(fuse_chain([pair] * n, noiseless)) for n in (2, 4)]
        assert fidelities[0] > fidelities[1] > fidelities[2]

    @pytest.mark.parametrize("links", [2, 4, 8])
    def test_infidelity_grows_linearly(self, links, noiseless):
        out = fuse_chain([werner(0.01)] * links, noiseless)
        assert 1 - bell_fidelity(out) == pytest.approx(links * 0.01, rel=0.15)

    def test_fusion_is_associative(self, noiseless):
        rng = np.random.default_rng(5)
        a, b, c = (BellDiagonalTuple(*rng.uniform(0.0, 0.05, 3)).to_state() for _ in range(3))
        left = fuse(fuse(a, b, noiseless), c, noiseless)
        right = fuse(a, fuse(b, c, noiseless), noiseless)
        assert np.allclose(left.matrix, right.matrix, atol=1e-10)

    def test_rejects_wrong_sizes(self, noiseless):
        with pytest.raises(ValueError):
            fuse(zero_state(3), make_bell(0), noiseless)
        with pytest.raises(ValueError):
            fuse_chain([], noiseless)
        with pytest.raises(ValueError):
            fuse_chain([make_bell(0)], noiseless)


class TestSteering:
    """Local rotations that reorder the error channels"""

    def test_ascending_order(self):
        pair = BellDiagonalTuple(0.05, 0.02, 0.01).to_state()
        steered = BellDiagonalTuple.from_state(steer_errors(pair, "ascending"))
        assert steered.as_tuple() == pytest.approx((0.01, 0.02, 0.05))

    def test_explicit_rank(self):
        pair = BellDiagonalTuple(0.01, 0.05, 0.02).to_state()
        steered = BellDiagonalTuple.from_state(steer_errors(pair, (2, 3, 1)))
        assert steered.as_tuple() == pytest.approx((0.01, 0.05, 0.02))
        assert steering_word(pair, "escape") == steering_word(pair, (2, 3, 1))

    def test_steering_keeps_fidelity(self):
        pair = BellDiagonalTuple(0.03, 0.02, 0.01).to_state()
        for order in ("ascending", "descending", "escape"):
            assert bell_fidelity(steer_errors(pair, order)) == pytest.approx(0.94)

    def test_rejects_bad_targets(self):
        pair = werner(0.1)
        with pytest.raises(ValueError):
            steering_word(pair, (1, 1, 2))
        with pytest.raises(ValueError):
            steering_word(pair, "sideways")
        with pytest.raises(ValueError):
            steering_word(zero_state(2), "ascending")


class TestPipeline:
    """Purify, fuse and re-purify stages"""

    def test_stage_report_validation(self):
        with pytest.raises(ValueError):
            ChainStageReport("i", 0.9, (0.02, 0.05, 0.03))
        with pytest.raises(ValueError):
            ChainStageReport("i", 0.9, (0.05, 0.03, 0.01))

    def test_config_validation(self):
        assert PipelineConfig().span_links == 144
        assert PipelineConfig(fuse_sizes=()).span_links == 1
        with pytest.raises(ValueError):
            PipelineConfig(fuse_sizes=(1,))
        with pytest.raises(ValueError):
            PipelineConfig(initial_level=4)
        with pytest.raises(ValueError):
            PipelineConfig(steering=(1, 2, 2))

    def test_single_stage_matches_purification(self, chain_noise):
        report = pipeline(PipelineConfig(fuse_sizes=()), chain_noise)
        assert len(report) == 1
        assert report[0].stage == "i"
        assert report[0].fidelity == pytest.approx(1 - run_level(3, chain_noise).infidelity)

    def test_reference_chain_regression(self, chain_noise):
        report = pipeline(PipelineConfig(), chain_noise)
        assert [s.stage for s in report] == ["i", "ii", "iii", "iv", "v"]
        purified, fused, repurified, refused, final = report
        assert purified.fidelity == pytest.approx(0.993817, abs=1e-3)
        assert repurified.fidelity == pytest.approx(0.994154, abs=2e-3)
        assert final.fidelity == pytest.approx(0.99450, abs=2e-3)
        # twelve-fold fusion amplifies any stage i offset
        assert 1 - fused.fidelity == pytest.approx(0.078, rel=0.25)
        assert 1 - refused.fidelity == pytest.approx(0.075, rel=0.25)
        assert report.total_cost == pytest.approx(190, abs=15)
        print(f"✅ Chain stages: {[round(s.fidelity, 6) for s in report]}, cost {report.total_cost:.1f}")

    def test_repurification_recovers_link_fidelity(self, chain_noise):
        report = pipeline(PipelineConfig(), chain_noise)
        for stage in (report[2], report[4]):
            assert stage.fidelity >= report[0].fidelity - 1e-3
            assert len(stage.words) == 2
        assert report[1].words == ()

    def test_measurement_errors_lower_the_chain(self, chain_noise, device_noise):
        config = PipelineConfig(fuse_sizes=(12,))
        clean = pipeline(config, chain_noise)
        lying = pipeline(config, device_noise)
        assert lying[1].fidelity < clean[1].fidelity
        assert lying[2].fidelity > lying[1].fidelity

    def test_extra_tier(self, chain_noise):
        report = pipeline(PipelineConfig(fuse_sizes=(12, 12, 12)), chain_noise)
        assert [s.stage for s in report][-2:] == ["vi", "vii"]
        assert len(report.stage_costs) == 4

    def test_fixed_steering_is_no_better_than_best(self, chain_noise):
        best = pipeline(PipelineConfig(fuse_sizes=(12,)), chain_noise)
        fixed = pipeline(PipelineConfig(fuse_sizes=(12,), steering="descending"), chain_noise)
        assert best[-1].fidelity >= fixed[-1].fidelity - 1e-12


class TestBudgets:
    """Fibre loss, light-speed cycle limits and memory windows"""

    def test_link_budget_at_17_km(self):
        budget = rate_budget(LinkBudget(spacing_km=17))
        assert budget.loss_db == pytest.approx(2.89, abs=0.01)
        assert budget.max_cycle_rate_hz == pytest.approx(18e3, rel=0.1)
        assert budget.success_scaling == pytest.approx(10 ** -0.289, rel=1e-9)
        assert budget.advised_spacing_km == pytest.approx(10 * math.log10(2) / 0.17)
        assert budget.attempt_shortfall == pytest.approx(470e3 / budget.max_cycle_rate_hz)

    def test_single_photon_halves_loss(self):
        assert LinkBudget(spacing_km=17, two_photon=False).loss_db == pytest.approx(1.445)

    def test_invalid_link(self):
        with pytest.raises(ValueError):
            LinkBudget(spacing_km=0)
        with pytest.raises(ValueError):
            rate_budget(LinkBudget(), falloff_factor=0.5)

    def test_chain_reach(self):
        assert chain_reach_km((12, 12), 17) == pytest.approx(2448)

    def test_memory_budget(self):
        budget = memory_budget(50.0, 190.0, fidelity_floor=0.99)
        assert budget.window_s == pytest.approx(-50 * math.log(0.98))
        assert budget.min_rate_hz == pytest.approx(190 / budget.window_s)
        assert dephasing_window(50.0, 0.99, "gaussian") == pytest.approx(50 * math.sqrt(-math.log(0.98)))

    def test_eleven_hertz_example(self):
        budget = memory_budget(50.0, 8.0, window_s=0.725)
        assert budget.min_rate_hz == pytest.approx(11.03, abs=0.01)

    def test_infinite_memory(self):
        budget = memory_budget(math.inf, 8.34)
        assert budget.window_s == math.inf
        assert budget.min_rate_hz == 0.0

    def test_memory_budget_validation(self):
        with pytest.raises(ValueError):
            memory_budget(50.0, 8.0, fidelity_floor=1.0)
        with pytest.raises(ValueError):
            memory_budget(50.0, 8.0, fidelity_floor=0.4)
        with pytest.raises(ValueError):
            dephasing_window(50.0, 0.99, "linear")
        assert memory_budget(50.0, 10.0, window_s=2.0).max_t0_s == pytest.approx(0.2)
