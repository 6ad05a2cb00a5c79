import io
import os
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from rich.console import Console

from campaign.config import Settings
from campaign.models import CampaignConfig, EpochObservation
from harness import runner
from harness.plan import ExperimentPlan, load_plan
from harness.runner import (
    derive_seed,
    run_campaign,
    run_day_parted,
    run_experiment,
    truth_for_repetition,
)
from harness.stacks import StackOptimizer, parse_stack, slot_profile
from market.models import MarketTruth
from market.simulator import save_truth, simulate_epoch

PLANS_DIR = os.path.join(os.path.dirname(__file__), '..', '..', 'plans')


class HarnessTestBase:
    """Shared fixtures"""

    @pytest.fixture
    def campaign(self):
        return {
            'total_budget': 2400.0,
            'epochs': 48,
            'num_media_objects': 4,
            'day_parting': False,
            'repetitions': 2,
        }

    @pytest.fixture
    def plan(self, campaign, tmp_path):
        return ExperimentPlan(campaign=campaign, stacks=['vnl', 'mab', 'skt1+skt2+skt3'],
                              output_dir=str(tmp_path / "out"), master_seed=7)

    @pytest.fixture
    def day_parted_plan(self, campaign, tmp_path):
        return ExperimentPlan(campaign={**campaign, 'day_parting': True}, stacks=['vnl', 'skt1'],
                              output_dir=str(tmp_path / "out"), master_seed=7)

    @pytest.fixture
    def settings(self):
        return Settings(MAX_WORKERS=2)

    @pytest.fixture
    def console(self):
        return Console(file=io.StringIO())


class TestParseStack:

    def test_full_stack(self):
        spec = parse_stack('skt1+skt2+skt3')
        assert spec.partitioner == 'skt1'
        assert spec.bidder == 'skt2'
        assert spec.pacing

    def test_single_components(self):
        assert parse_stack('vnl').bidder is None
        assert parse_stack('skt2').partitioner == 'vnl'
        assert parse_stack('skt1+pst').bidder == 'pst'
        assert not parse_stack('lop').pacing

    @pytest.mark.parametrize('name', ['', 'foo', 'skt1+', 'skt3+skt1', 'skt1+skt1', 'skt2+pst'])
    def test_invalid(self, name):
        with pytest.raises(ValueError):
            parse_stack(name)


class TestExperimentPlan(HarnessTestBase):

    def test_defaults(self):
        plan = ExperimentPlan()
        assert plan.stacks == ['vnl', 'mab', 'lop', 'skt1']
        assert plan.baseline == 'vnl'
        assert plan.slots == list(range(24))

    def test_media_objects_aligned(self):
        plan = ExperimentPlan(campaign={'num_media_objects': 3, 'epochs': 48})
        assert plan.simulator.num_media_objects == 3

    def test_unknown_baseline(self):
        with pytest.raises(ValidationError):
            ExperimentPlan(stacks=['vnl', 'skt1'], baseline='mab')

    def test_unknown_stack(self):
        with pytest.raises(ValidationError):
            ExperimentPlan(stacks=['vnl', 'skt9'])

    def test_slot_needs_day_parting(self, campaign):
        with pytest.raises(ValidationError):
            ExperimentPlan(campaign=campaign, slot=3)
        with pytest.raises(ValidationError):
            ExperimentPlan(slot=24)

    def test_table_plans(self):
        table1 = load_plan(os.path.join(PLANS_DIR, 'table1.json'), settings=Settings())
        assert table1.baseline == 'vnl'
        assert table1.slots == [0]
        assert table1.campaign.epochs_per_slot == 30

        table2 = load_plan(os.path.join(PLANS_DIR, 'table2.json'), settings=Settings())
        assert table2.baseline == 'skt1'
        assert table2.stacks[-1] == 'skt1+skt2+skt3'

    def test_overrides_win(self):
        plan = load_plan(os.path.join(PLANS_DIR, 'table1.json'), {'campaign': {'repetitions': 3}},
                         settings=Settings())
        assert plan.campaign.repetitions == 3
        assert plan.campaign.epochs == 720

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv('SKOTT_CAMPAIGN__REPETITIONS', '4')
        monkeypatch.setenv('SKOTT_MASTER_SEED', '11')
        plan = load_plan(settings=Settings())
        assert plan.campaign.repetitions == 4
        assert plan.master_seed == 11

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_plan(str(tmp_path / "absent.json"), settings=Settings())

    def test_profile_file(self, campaign, tmp_path):
        path = tmp_path / "profile.csv"
        pd.DataFrame({'epoch': np.arange(48), 'ideal_cumulative': 50.0 * np.arange(1, 49)}).to_csv(path, index=False)
        plan = load_plan(overrides={'campaign': {**campaign, 'profile_file': str(path)}}, settings=Settings())
        assert len(plan.campaign.ideal_profile) == 48
        assert plan.campaign.ideal_profile[-1] == pytest.approx(2400.0)


class TestStackOptimizer(HarnessTestBase):

    @pytest.fixture
    def truth(self):
        return MarketTruth(ctr=[0.001, 0.002, 0.0015, 0.001], itot=[1e5] * 4, beta=[1.0, 0.5, 2.0, 1.0])

    def test_vnl_keeps_budgets_and_bids(self, campaign, truth):
        config = CampaignConfig(**campaign)
        optimizer = StackOptimizer(parse_stack('vnl'), config, slot_profile(config, 0),
                                   np.random.default_rng(0))
        rng = np.random.default_rng(1)
        for epoch in range(config.epochs - 1):
            obs = simulate_epoch(truth, optimizer.budgets, optimizer.bids, rng)
            optimizer.update(obs, epoch, epoch // 24)
            assert optimizer.budgets == pytest.approx([12.5] * 4)
            assert optimizer.bids.tolist() == [config.initial_bid] * 4

        optimizer.update(EpochObservation.zeros(4), config.epochs - 1, 1)
        assert optimizer.budgets.tolist() == [0.0] * 4

    def test_slot_profile(self):
        config = CampaignConfig()
        profile = slot_profile(config, 5)
        assert profile.epochs == 30
        assert profile.total_budget == pytest.approx(config.total_budget / 24)

        flat = CampaignConfig(epochs=48, day_parting=False)
        assert slot_profile(flat, 0).epochs == 48

    def test_mab_spends_the_epoch_budget(self, campaign, truth):
        config = CampaignConfig(**campaign)
        optimizer = StackOptimizer(parse_stack('mab'), config, slot_profile(config, 0),
                                   np.random.default_rng(0))
        rng = np.random.default_rng(1)
        for epoch in range(10):
            obs = simulate_epoch(truth, optimizer.budgets, optimizer.bids, rng)
            optimizer.update(obs, epoch, 0)
            assert optimizer.budgets.sum() == pytest.approx(50.0)

    def test_fill_gaps(self, campaign):
        config = CampaignConfig(**campaign)
        optimizer = StackOptimizer(parse_stack('skt1'), config, slot_profile(config, 0),
                                   np.random.default_rng(0))
        first = EpochObservation(impressions=[100.0] * 4, clicks=[1.0] * 4, spend=[10.0] * 4)
        assert optimizer.fill_gaps(first) is first

        gapped = EpochObservation(impressions=[np.nan, 100.0, 100.0, 100.0], clicks=[1.0] * 4,
                                  spend=[10.0, np.nan, 10.0, 10.0])
        filled = optimizer.fill_gaps(gapped)
        assert not filled.has_gaps()
        assert filled.impressions[0] == pytest.approx(100.0)
        assert filled.spend[1] == pytest.approx(10.0)


class TestRunner(HarnessTestBase):

    def test_derive_seed(self):
        first = derive_seed(1, 0, "truth").generate_state(2).tolist()
        assert first == derive_seed(1, 0, "truth").generate_state(2).tolist()
        assert first != derive_seed(1, 1, "truth").generate_state(2).tolist()
        assert first != derive_seed(2, 0, "truth").generate_state(2).tolist()

    def test_truth_shared_within_repetition(self, plan):
        assert truth_for_repetition(plan, 0).digest() == truth_for_repetition(plan, 0).digest()
        assert truth_for_repetition(plan, 0).digest() != truth_for_repetition(plan, 1).digest()

    def test_truth_file(self, plan, tmp_path):
        truth = MarketTruth(ctr=[0.001] * 4, itot=[1e5] * 4, beta=[1.0] * 4)
        path = str(tmp_path / "truth.json")
        save_truth(truth, path)
        fixed = plan.model_copy(update={'truth_file': path})
        assert truth_for_repetition(fixed, 1).digest() == truth.digest()

        wrong = MarketTruth(ctr=[0.001], itot=[1e5], beta=[1.0])
        save_truth(wrong, path)
        with pytest.raises(ValueError):
            truth_for_repetition(fixed, 0)

    def test_run_campaign(self, plan):
        truth = truth_for_repetition(plan, 0)
        result = run_campaign(parse_stack('vnl'), plan, 0, truth)
        metrics = result.metrics
        assert metrics.epochs == 48
        assert metrics.campaign_budget == pytest.approx(2400.0)
        assert np.all(metrics.rescaled_kld == 0.0)
        assert np.all(metrics.spend <= metrics.budget + 1e-9)
        assert len(result.trajectories) == 48 * 4

        with pytest.raises(ValueError):
            run_day_parted(parse_stack('vnl'), plan, 0, truth)

    @pytest.mark.parametrize('stack', ['vnl', 'skt1+skt2+skt3'])
    def test_campaign_without_budget(self, campaign, tmp_path, stack):
        plan = ExperimentPlan(campaign={**campaign, 'total_budget': 0.0}, stacks=[stack],
                              output_dir=str(tmp_path / "out"))
        metrics = run_campaign(parse_stack(stack), plan, 0, truth_for_repetition(plan, 0)).metrics
        assert metrics.epochs == 48
        assert metrics.campaign_budget == 0.0
        assert metrics.total_spend == 0.0
        assert metrics.total_clicks == 0.0

    def test_day_parted_isolation(self, day_parted_plan):
        truth = truth_for_repetition(day_parted_plan, 0)
        seen = []
        original = StackOptimizer.update

        def record(self, obs, epoch, day):
            seen.append((id(self), epoch, day))
            return original(self, obs, epoch, day)

        with patch.object(StackOptimizer, 'update', autospec=True, side_effect=record):
            result = run_day_parted(parse_stack('skt1'), day_parted_plan, 0, truth)

        optimizers = {}
        for optimizer, epoch, day in seen:
            optimizers.setdefault(optimizer, []).append((epoch, day))
        assert len(optimizers) == 24
        assert all(epochs == [(0, 0), (1, 1)] for epochs in optimizers.values())

        metrics = result.metrics
        assert metrics.slot.tolist() == list(range(24)) * 2
        assert metrics.day.tolist() == [0] * 24 + [1] * 24
        by_slot = pd.Series(metrics.spend).groupby(metrics.slot).sum()
        assert by_slot.sum() == pytest.approx(metrics.total_spend)

        with pytest.raises(ValueError):
            run_campaign(parse_stack('skt1'), day_parted_plan, 0, truth)

    def test_single_slot(self, day_parted_plan):
        plan = day_parted_plan.model_copy(update={'slot': 7})
        result = run_day_parted(parse_stack('vnl'), plan, 0, truth_for_repetition(plan, 0))
        assert result.metrics.slot.tolist() == [7, 7]
        assert result.metrics.campaign_budget == pytest.approx(100.0)

    def test_experiment_outputs(self, plan, settings, console):
        outcome = run_experiment(plan, settings, console)
        assert [row.algo for row in outcome.rows] == ['vnl', 'mab', 'skt1+skt2+skt3']
        assert outcome.rows[0].clk == pytest.approx(100.0)
        assert outcome.rows[0].kld == 0.0
        assert all(row.repetitions == 2 for row in outcome.rows)
        assert not outcome.failures

        for name in ('per_epoch.csv', 'series.csv', 'trajectories.csv', 'summary.json', 'failures.json'):
            assert os.path.exists(os.path.join(plan.output_dir, name))
        per_epoch = pd.read_csv(os.path.join(plan.output_dir, 'per_epoch.csv'))
        assert len(per_epoch) == 3 * 2 * 48

    def test_deterministic(self, plan, settings, console, tmp_path):
        first = plan.model_copy(update={'output_dir': str(tmp_path / "first")})
        second = plan.model_copy(update={'output_dir': str(tmp_path / "second")})
        run_experiment(first, settings, console)
        run_experiment(second, settings, console)
        with open(os.path.join(first.output_dir, 'per_epoch.csv'), 'rb') as a, \
                open(os.path.join(second.output_dir, 'per_epoch.csv'), 'rb') as b:
            assert a.read() == b.read()

    def test_stacks_share_clicks_stream(self, plan):
        truth = truth_for_repetition(plan, 0)
        vnl = run_campaign(parse_stack('vnl'), plan, 0, truth).metrics
        again = run_campaign(parse_stack('vnl'), plan, 0, truth).metrics
        assert vnl.clicks.tolist() == again.clicks.tolist()

    def test_gap_injection(self, campaign, tmp_path, settings, console):
        plan = ExperimentPlan(campaign=campaign, simulator={'gap_probability': 0.2},
                              stacks=['skt1', 'skt1+skt2+skt3'], output_dir=str(tmp_path / "gaps"))
        outcome = run_experiment(plan, settings, console)
        assert not outcome.failures
        for run in outcome.runs:
            assert np.all(np.isfinite(run.spend))
            assert np.all(np.isfinite(run.clicks))

    def test_partial_failure(self, plan, settings, console):
        original = runner._closed_loop

        def failing(spec, plan, repetition, truth):
            if spec.name == 'mab' and repetition == 1:
                raise RuntimeError("market unavailable")
            return original(spec, plan, repetition, truth)

        with patch('harness.runner._closed_loop', side_effect=failing):
            outcome = run_experiment(plan, settings, console)

        assert len(outcome.failures) == 1
        assert outcome.failures[0].algorithm == 'mab'
        assert outcome.failures[0].repetition == 1
        rows = {row.algo: row for row in outcome.rows}
        assert rows['mab'].repetitions == 1
        assert rows['vnl'].repetitions == 2

    def test_baseline_failure_gives_no_rows(self, plan, settings, console):
        with patch('harness.runner._closed_loop', side_effect=RuntimeError("broken")):
            outcome = run_experiment(plan, settings, console)
        assert outcome.rows == []
        assert len(outcome.failures) == 6
