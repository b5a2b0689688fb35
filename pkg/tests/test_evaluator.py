import csv
import json
import math

import numpy as np
import pytest

from config import RunConfig
from dcdnn.baseline import NUM_MODES, predict, ref_line_from_sample, sample_baseline_sse
from dcdnn.dataset import Plane, SampleSet, extract_sample, load_plane
from dcdnn.errors import ConfigurationError, DataError, UsageError
from dcdnn.evaluator import (
    BASELINE,
    DCDNN,
    CostModel,
    ModeDecision,
    decide,
    decide_set,
    emit_report,
    evaluate_plane,
    lambda_from_qp,
    mode_histogram,
    mse_improvement,
    read_decisions,
    render_mode_map,
    usage_by_size,
    usage_rate,
    write_decisions,
)
from dcdnn.fcnet import init_network
from dcdnn.trainer import RoundRecord, TotalRecord, TrainHistory, sample_sse


def constant_net(output, ref_lines=1, block_size=4):
    """Network whose prediction is `output` (pixel units) whatever the references"""
    net = init_network(block_size, ref_lines, 4, 1, seed=0)
    for layer in net.layers:
        layer.weights[:] = 0.0
    net.layers[-1].bias[:] = np.asarray(output, dtype=np.float64).ravel() * net.value_scale
    return net


def ramp_sample(slope=10.0):
    """Flat neighbourhood at 100 with a horizontal ramp inside the 4x4 block at (4, 4)"""
    pixels = np.full((12, 12), 100.0)
    pixels[4:8, 4:8] += np.tile(slope * (np.arange(4) - 1.5), (4, 1))
    return extract_sample(Plane(12, 12, np.rint(pixels)), 4, 4, 4, 1)


def decision(kind, mode=0, n=8, x=0, y=0, image_id=0):
    return ModeDecision(image_id, x, y, n, kind, mode, 1.0, 1.0, 0.0)


class TestCostModel:
    def test_lambda_from_qp(self):
        assert lambda_from_qp(12) == pytest.approx(0.85)
        assert lambda_from_qp(27) == pytest.approx(0.85 * 32)

    def test_bits(self):
        assert CostModel(1.0, modes=1).dcdnn_bits == 1.0
        assert CostModel(1.0, flag_bits=1.0, modes=4).dcdnn_bits == 3.0
        assert CostModel(1.0, baseline_mode_bits=6.0).baseline_bits == 7.0

    def test_from_config(self):
        assert CostModel.from_config(RunConfig(qp=27), 2).lam == pytest.approx(27.2)
        assert CostModel.from_config(RunConfig(lambda_override=3.5), 2).lam == 3.5

    @pytest.mark.parametrize("kwargs", [{"lam": -1.0}, {"lam": 1.0, "modes": 0}, {"lam": 1.0, "flag_bits": -1}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            CostModel(**kwargs)

    def test_decision_cost(self):
        d = ModeDecision(0, 0, 0, 4, DCDNN, 1, 10.0, 2.0, 3.0)
        assert d.cost == 16.0 and d.is_dcdnn


class TestDecide:
    def test_lambda_zero_is_pure_sse(self):
        sample = ramp_sample()
        perfect = constant_net(sample.target)
        result = decide(sample, [{4: perfect}], CostModel(0.0, modes=1))
        assert result.kind == DCDNN
        assert result.sse < 1e-12

    def test_tie_goes_to_baseline(self):
        sample = extract_sample(Plane(12, 12, np.full((12, 12), 100)), 4, 4, 4, 1)
        result = decide(sample, [{4: constant_net(np.zeros(16))}], CostModel(0.0, modes=1))
        assert (result.kind, result.mode, result.sse) == (BASELINE, 0, 0.0)

    def test_fewest_bits_win_for_huge_lambda(self):
        sample = ramp_sample()
        bad = {4: constant_net(np.full(16, 50.0))}
        cheap_flag = decide(sample, [bad, bad], CostModel(1e12, flag_bits=1.0, modes=2, baseline_mode_bits=6.0))
        assert cheap_flag.kind == DCDNN and cheap_flag.bits == 2.0

        perfect = {4: constant_net(sample.target)}
        cheap_baseline = decide(sample, [perfect] * 4, CostModel(1e12, flag_bits=1.0, modes=4, baseline_mode_bits=0.5))
        assert cheap_baseline.kind == BASELINE and cheap_baseline.bits == 1.5

    def test_single_mode_costs_only_the_flag(self):
        sample = ramp_sample()
        result = decide(sample, [{4: constant_net(sample.target)}], CostModel(5.0, flag_bits=1.0, modes=1))
        assert result.kind == DCDNN and result.bits == 1.0

    def test_no_banks_means_baseline(self):
        result = decide(ramp_sample(), [], CostModel(1.0))
        assert result.kind == BASELINE
        assert (result.mode, result.sse) == sample_baseline_sse(ramp_sample())

    def test_decision_is_optimal(self):
        rng = np.random.default_rng(3)
        plane = Plane(32, 32, rng.integers(0, 256, (32, 32)))
        banks = [{4: init_network(4, 2, 8, 2, seed=k)} for k in range(3)]
        cost = CostModel(20.0, modes=3)
        samples = SampleSet.from_samples([extract_sample(plane, x, y, 4, 2) for y in (4, 12, 20) for x in (4, 16)])
        for result, sample in zip(decide_set(samples, banks, cost), samples.samples()):
            refs = ref_line_from_sample(sample)
            block = sample.original_block()
            options = [float(np.sum((predict(m, refs, 4) - block) ** 2)) + cost.lam * cost.baseline_bits
                       for m in range(NUM_MODES)]
            options += [float(sample_sse(b[4], sample.ref_vector[None], sample.target[None])[0])
                        + cost.lam * cost.dcdnn_bits for b in banks]
            assert result.cost <= min(options) + 1e-9
            single = decide(sample, banks, cost)
            assert (single.kind, single.mode) == (result.kind, result.mode)
            assert single.sse == pytest.approx(result.sse)

    def test_missing_network(self):
        with pytest.raises(ConfigurationError):
            decide(ramp_sample(), [{8: init_network(8, 1, 4, 1, seed=0)}], CostModel(1.0))


class TestMseImprovement:
    def test_zero_network(self):
        sample = ramp_sample()
        baseline_sse, dcdnn_sse = mse_improvement(sample, [{4: constant_net(np.zeros(16))}])
        assert dcdnn_sse == pytest.approx(float(sample.target @ sample.target))
        assert baseline_sse == sample_baseline_sse(sample)[1]

    def test_best_of_k(self):
        sample = ramp_sample()
        banks = [{4: constant_net(np.zeros(16))}, {4: constant_net(sample.target)}]
        assert mse_improvement(sample, banks)[1] < 1e-12

    def test_needs_banks(self):
        with pytest.raises(UsageError):
            mse_improvement(ramp_sample(), [])


def random_quadtree(rng, x, y, size, out):
    if size > 4 and rng.random() < 0.6:
        half = size // 2
        for dy in (0, half):
            for dx in (0, half):
                random_quadtree(rng, x + dx, y + dy, half, out)
    else:
        kind = DCDNN if rng.random() < 0.5 else BASELINE
        out.append(ModeDecision(0, x, y, size, kind, int(rng.integers(0, 2)), 0.0, 0.0, 0.0))


class TestUsageRate:
    def test_one_quarter(self):
        decisions = [decision(DCDNN)] + [decision(BASELINE, x=x, y=y) for x, y in ((8, 0), (0, 8), (8, 8))]
        assert usage_rate(decisions, 16, 16) == 0.25

    def test_all_dcdnn(self):
        decisions = [decision(DCDNN, x=x, y=y) for x in (0, 8) for y in (0, 8)]
        assert usage_rate(decisions, 16, 16) == 1.0

    def test_matches_pixel_marking(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            decisions = []
            for ox in (0, 32):
                random_quadtree(rng, ox, 0, 32, decisions)
            marked = np.zeros((32, 64), dtype=bool)
            for d in decisions:
                if d.is_dcdnn:
                    marked[d.y:d.y + d.block_size, d.x:d.x + d.block_size] = True
            rate = usage_rate(decisions, 64, 32)
            assert rate == marked.sum() / marked.size
            assert 0.0 <= rate <= 1.0
            assert sum(usage_by_size(decisions, 64, 32).values()) == pytest.approx(rate)

    def test_exceeding_frame(self):
        with pytest.raises(DataError):
            usage_rate([decision(DCDNN, n=32)], 16, 16)

    def test_empty_frame(self):
        with pytest.raises(UsageError):
            usage_rate([], 0, 16)


class TestHistogram:
    def test_empty(self):
        hist = mode_histogram([], modes=2)
        assert hist.total() == 0
        assert hist.baseline.shape == (NUM_MODES,) and hist.dcdnn.tolist() == [0, 0]

    def test_known_composition(self):
        decisions = ([decision(BASELINE, 26)] * 3 + [decision(BASELINE, 0)] * 2
                     + [decision(DCDNN, 1)] * 4 + [decision(DCDNN, 0)])
        hist = mode_histogram(decisions, modes=2)
        assert hist.baseline[26] == 3 and hist.baseline[0] == 2
        assert hist.dcdnn.tolist() == [1, 4]
        assert hist.total() == len(decisions) == 10


class TestModeMap:
    def test_levels(self, tmp_path):
        decisions = [decision(DCDNN, 1, n=8), decision(BASELINE, 5, n=8, x=8),
                     decision(DCDNN, 0, n=8, y=8), decision(BASELINE, 0, n=8, x=8, y=8)]
        plane = render_mode_map(decisions, 16, 16, 2, str(tmp_path / "map.pgm"))
        assert plane.samples[0, 0] == 255 and plane.samples[8, 0] == 128
        assert plane.samples[0, 8] == 0 and plane.samples[15, 15] == 0
        assert load_plane(str(tmp_path / "map.pgm")) == plane


class TestEvaluatePlane:
    def test_covers_whole_pus(self):
        plane = Plane(20, 20, np.random.default_rng(1).integers(0, 256, (20, 20)))
        cfg = RunConfig(pu_size=8, tiling="uniform4", ref_lines=1)
        decisions, width, height = evaluate_plane(plane, [], cfg, CostModel(1.0))
        assert (width, height) == (16, 16)
        assert len(decisions) == 16
        assert sum(d.block_size ** 2 for d in decisions) == 256
        assert [(d.y, d.x) for d in decisions] == sorted((d.y, d.x) for d in decisions)

    def test_uses_bank_reference_lines(self):
        plane = Plane(16, 16, np.random.default_rng(1).integers(0, 256, (16, 16)))
        banks = [{4: init_network(4, 2, 4, 1, seed=0)}]
        decisions, _, _ = evaluate_plane(plane, banks, RunConfig(pu_size=8, ref_lines=8), CostModel(1.0))
        assert len(decisions) == 16


class TestReportFiles:
    def read_csv(self, path):
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.reader(f))

    def test_empty_run_has_header_only_tables(self, tmp_path):
        paths = emit_report(None, [], str(tmp_path))
        for name in ("loss_per_round", "retention", "usage_by_size", "mode_histogram", "model_sizes"):
            assert len(self.read_csv(paths[name])) == 1
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["schema_version"] == 1 and summary["decisions"] == 0

    def test_decisions_round_trip(self, tmp_path):
        decisions = [ModeDecision(0, 4, 8, 4, DCDNN, 1, 123.456, 2.0, 27.2),
                     ModeDecision(1, 0, 0, 8, BASELINE, 26, 0.5, 7.0, 27.2)]
        write_decisions(decisions, str(tmp_path / "d.csv"))
        assert read_decisions(str(tmp_path / "d.csv")) == decisions

    def test_summary_matches_tables(self, tmp_path):
        rng = np.random.default_rng(5)
        decisions = []
        random_quadtree(rng, 0, 0, 32, decisions)
        history = TrainHistory(
            rounds=[RoundRecord(2, 1, 0, 5, 12.5, None), RoundRecord(2, 2, 0, 5, 11.0, 0.8)],
            totals=[TotalRecord(2, 1, 12.0), TotalRecord(2, 2, 10.5)],
        )
        banks = [{4: init_network(4, 1, 8, 2, seed=0)}] * 2
        paths = emit_report(history, decisions, str(tmp_path), 2, (32, 32), banks, decisions)
        summary = json.loads((tmp_path / "summary.json").read_text())

        hist = self.read_csv(paths["mode_histogram"])
        assert hist[0] == ["kind", "mode", "count", "count_without_dcdnn"]
        assert sum(int(row[2]) for row in hist[1:]) == summary["histogram_total"] == len(decisions)

        sizes = self.read_csv(paths["usage_by_size"])[1:]
        assert sum(int(row[1]) for row in sizes) == summary["dcdnn_decisions"]
        assert sum(int(row[2]) for row in sizes) == len(decisions)
        assert sum(float(row[3]) for row in sizes) == pytest.approx(summary["usage_rate"], rel=1e-5)

        losses = self.read_csv(paths["loss_per_round"])[1:]
        assert [float(row[4]) for row in losses] == [12.5, 11.0]
        assert self.read_csv(paths["retention"])[1:] == [["2", "2", "0", "0.8"]]
        assert summary["final_total_loss"] == {"2": 10.5}

        model_rows = self.read_csv(paths["model_sizes"])[1:]
        assert model_rows[0][0] == "4" and int(model_rows[0][6]) == 2
        assert math.isclose(summary["total_sse"], sum(d.sse for d in decisions))
