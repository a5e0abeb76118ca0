import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from exitbert import metrics
from exitbert.checkpoint import load_checkpoint, save_checkpoint
from exitbert.config import RunConfig, parse_value
from exitbert.early_exit import ExitPolicy, ExitTrace
from exitbert.errors import ConfigError, DataError, DegenerateMetricError
from exitbert.evaluation import TaskResult, dev_score_of, evaluate, score_predictions
from exitbert.model import MultitaskModel
from exitbert.report import REPORT_KEYS, MetricsReport, build_report, emit_reports
from conftest import tiny_config


class TestAccuracy:
    def test_all_correct(self):
        assert metrics.accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_worked(self):
        assert metrics.accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_constant_on_balanced(self):
        assert metrics.accuracy([0] * 10, [0, 1] * 5) == 0.5

    def test_errors(self):
        with pytest.raises(DataError):
            metrics.accuracy([1], [1, 2])
        with pytest.raises(DataError):
            metrics.accuracy([], [])

    def test_permutation_invariant(self, rng):
        p, g = rng.integers(0, 3, 30), rng.integers(0, 3, 30)
        perm = rng.permutation(30)
        assert metrics.accuracy(p, g) == metrics.accuracy(p[perm], g[perm])


class TestPearson:
    def test_affine(self):
        x = np.arange(6.0)
        assert metrics.pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-15)
        assert metrics.pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)

    def test_worked(self):
        oracle = 3 / math.sqrt(2 * 14 / 3)
        assert metrics.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(oracle, abs=1e-15)
        assert metrics.pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9820, abs=1e-4)

    def test_constant(self):
        with pytest.raises(DegenerateMetricError):
            metrics.pearson([2.0, 2.0, 2.0], [1, 2, 3])
        with pytest.raises(DegenerateMetricError):
            metrics.pearson([1, 2, 3], [0.5, 0.5, 0.5])

    @given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5))
    def test_affine_invariance(self, a, b, c, d):
        x = np.array([0.3, -1.2, 2.5, 0.7, 1.1])
        y = np.array([1.0, 0.2, 3.3, -0.4, 2.2])
        base = metrics.pearson(x, y)
        assert abs(metrics.pearson(a * x + b, c * y + d) - base) < 1e-12


class TestDevScore:
    def test_trivial(self):
        assert metrics.dev_score(1, 1, 1) == 1.0
        assert metrics.dev_score(para=0.5) == 0.5

    def test_table_row(self):
        exact = float((Fraction("0.314") + Fraction("0.369") + Fraction("0.199")) / 3)
        got = metrics.dev_score(0.314, 0.369, 0.199)
        assert abs(got - exact) < 1e-12 and abs(got - 0.294) < 1e-12

    def test_none_present(self):
        with pytest.raises(DataError):
            metrics.dev_score()

    def test_undefined_counts_zero(self):
        assert dev_score_of({"sst": 0.9, "sts": None}) == pytest.approx(0.45)


class TestComputeCost:
    def test_cases(self):
        assert metrics.compute_cost([4, 4, 4], 4) == (4.0, 0.0)
        assert metrics.compute_cost([1, 1], 4) == (1.0, 0.75)
        assert metrics.compute_cost([2, 4], 4) == (3.0, 0.25)

    def test_empty(self):
        with pytest.raises(DataError):
            metrics.compute_cost([], 4)


class TestScoring:
    def test_degenerate_sts_flagged(self):
        score, constant, note = score_predictions("sts", np.ones(4), [1.0, 2.0, 3.0, 4.0])
        assert score is None and constant and "constant" in note

    def test_constant_classifier_flagged(self):
        score, constant, _ = score_predictions("para", np.zeros(10, int), [0, 1] * 5)
        assert score == 0.5 and constant


def result(task, preds, golds, exits):
    score, constant, note = score_predictions(task, np.asarray(preds), np.asarray(golds))
    traces = [ExitTrace(str(i), [0.5] * e, e) for i, e in enumerate(exits)]
    return TaskResult(task, [str(i) for i in range(len(preds))], np.asarray(preds),
                      np.asarray(golds), score, constant, traces, note)


class TestReport:
    def sample(self):
        results = {"sst": result("sst", [1, 2, 3, 0], [1, 2, 3, 3], [2, 4, 4, 2]),
                   "sts": result("sts", [0.5, 7.2, -1.0, 2.0], [1.0, 4.0, 0.0, 2.5], [4] * 4)}
        return results, build_report(results, 4, ExitPolicy.threshold(0.9), 12, 1.5,
                                     RunConfig().to_dict())

    def test_fields(self):
        _, rep = self.sample()
        assert rep.sst_accuracy == 0.75
        assert rep.dev_score == pytest.approx((0.75 + rep.sts_pearson) / 2)
        assert rep.avg_exit_layer == {"sst": 3.0, "sts": 4.0}
        assert rep.layers_saved_fraction == pytest.approx(1 - 3.5 / 4)
        assert rep.para_accuracy is None and rep.steps == 12

    def test_golden_keys(self):
        _, rep = self.sample()
        assert list(json.loads(rep.to_json())) == list(REPORT_KEYS)
        assert REPORT_KEYS == (
            "sst_accuracy", "para_accuracy", "sts_pearson", "dev_score", "avg_exit_layer",
            "layers_saved_fraction", "exit_policy", "constant_predictions", "notes", "steps",
            "wall_seconds", "config")

    def test_round_trip(self):
        _, rep = self.sample()
        assert MetricsReport.from_json(rep.to_json()) == rep

    def test_files(self, tmp_path):
        results, rep = self.sample()
        written = emit_reports(rep, results, tmp_path, traces=True)
        assert {p.name for p in written} == {"metrics.json", "predictions_sst.csv",
                                             "predictions_sts.csv", "traces.csv"}
        rows = (tmp_path / "predictions_sts.csv").read_text().splitlines()
        assert rows[0] == "id,prediction" and len(rows) == 5
        assert [float(r.split(",")[1]) for r in rows[1:]] == [0.5, 5.0, 0.0, 2.0]
        traces = (tmp_path / "traces.csv").read_text().splitlines()
        assert traces[0] == "example_id,layer,statistic,exited"
        assert len(traces) == 1 + 2 + 4 + 4 + 2 + 4 * 4

    def test_constant_flag(self):
        results = {"para": result("para", [0] * 10, [0, 1] * 5, [4] * 10)}
        rep = build_report(results, 4, ExitPolicy.never(), 0, 0.0, {})
        assert rep.para_accuracy == 0.5 and rep.constant_predictions == ["para"]
        assert "para" in rep.notes

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        results, rep = self.sample()
        with pytest.raises(OSError, match="file"):
            emit_reports(rep, results, blocker / "sub")


class TestEvaluate:
    def test_policy_none_full_depth(self, synth_small):
        data, vocab = synth_small
        model = MultitaskModel(tiny_config(len(vocab)))
        res = evaluate(model, {"sst": data["sst"][:10]}, vocab, ExitPolicy.never())
        assert [t.exit_layer for t in res["sst"].traces] == [2] * 10
        assert len(res["sst"].predictions) == 10


class TestConfig:
    def test_tuned_defaults(self):
        cfg = RunConfig()
        assert cfg["train.batch_size"] == 16 and cfg["model.dropout"] == 0.3
        assert cfg["smart.enabled"] == ("para",)

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\ntrain.epochs = 7  # trailing\nsmart.enabled = para,sts\n"
                        "exit.tau = never\noptimizer.betas = 0.8, 0.9\n")
        cfg = RunConfig.from_file(path)
        assert cfg["train.epochs"] == 7 and cfg["smart.enabled"] == ("para", "sts")
        assert cfg["exit.tau"] == math.inf and cfg["optimizer.betas"] == (0.8, 0.9)
        assert set(cfg.changed()) == {"train.epochs", "smart.enabled", "exit.tau",
                                      "optimizer.betas"}

    def test_text_round_trip(self, tmp_path):
        cfg = RunConfig({"train.seed": 4, "exit.lte_enabled": True, "data.tasks": ("sst",)})
        path = tmp_path / "c.cfg"
        path.write_text(cfg.to_text())
        assert RunConfig.from_file(path) == cfg
        assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_value("train.nonsense", "1")
        with pytest.raises(ConfigError):
            parse_value("train.epochs", "many")
        bad = tmp_path / "bad.cfg"
        bad.write_text("train.epochs 3\n")
        with pytest.raises(ConfigError, match="line 1"):
            RunConfig.from_file(bad)
        with pytest.raises(ConfigError):
            RunConfig.from_file(tmp_path / "missing.cfg")


def test_checkpoint_round_trip(tmp_path, tiny_model):
    path = save_checkpoint(tmp_path / "m.npz", tiny_model.params, {"vocab": ["a"], "k": 1})
    params, meta = load_checkpoint(path)
    assert meta == {"vocab": ["a"], "k": 1}
    assert set(params) == set(tiny_model.params)
    for name, t in tiny_model.params.items():
        assert params[name].data.tobytes() == t.data.tobytes()
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.npz")
