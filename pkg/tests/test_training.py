import math

import numpy as np
import pytest

from exitbert.data import build_vocab, synth_task
from exitbert.encoder import is_backbone
from exitbert.errors import ConfigError, DataError
from exitbert.model import MultitaskModel
from exitbert.optim import make_optimizer
from exitbert.smart import SmartConfig
from exitbert.training import (AlternatingSwitch, TrainConfig, Trainer, alternating_stages,
                               final_stage_names, focus_names, slf_stage2_epochs)
from conftest import tiny_config


def make_trainer(vocab, seed=0, layers=2, smart=None, kind="adamw", lr=1e-3, **cfg):
    model = MultitaskModel(tiny_config(len(vocab), num_layers=layers),
                           rng=np.random.default_rng([seed, 0]))
    opt = make_optimizer(kind, model.params, lr)
    return Trainer(model, opt, TrainConfig(seed=seed, **cfg), vocab, smart)


def changed(before, after):
    return {k for k in before if before[k].tobytes() != after[k].tobytes()}


@pytest.fixture
def small(synth_small):
    data, vocab = synth_small
    return {t: ex[:20] for t, ex in data.items()}, vocab


class TestConfig:
    def test_rejects(self):
        with pytest.raises(ConfigError):
            TrainConfig(strategy="alternating")
        with pytest.raises(ConfigError):
            TrainConfig(freeze_mode="frozen")
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.epochs, c.delta_switch) == (16, 5, 1e-4)


class TestEpoch:
    def test_step_count(self, small):
        data, vocab = small
        data = {"sst": data["sst"][:13], "para": data["para"][:7], "sts": data["sts"][:20]}
        tr = make_trainer(vocab, batch_size=4)
        stats = tr.train_epoch_multitask(data)
        assert stats.steps == {"sst": 4, "para": 2, "sts": 5}
        assert stats.total_steps == sum(math.ceil(len(v) / 4) for v in data.values())

    def test_task_order_and_single_task(self, small):
        data, vocab = small
        tr = make_trainer(vocab, batch_size=8)
        stats = tr.train_epoch_multitask({"sts": data["sts"], "sst": data["sst"]})
        assert list(stats.mean_loss) == ["sst", "sts"]
        solo = make_trainer(vocab, batch_size=8).train_epoch_multitask({"sst": data["sst"]})
        assert list(solo.steps) == ["sst"]

    def test_empty(self, small):
        _, vocab = small
        with pytest.raises(DataError):
            make_trainer(vocab).train_epoch_multitask({"sst": []})

    def test_pretrain_freezes_backbone(self, small):
        data, vocab = small
        tr = make_trainer(vocab, batch_size=8, freeze_mode="pretrain", epochs=3)
        before = tr.model.snapshot()
        tr.run(data)
        diff = changed(before, tr.model.snapshot())
        assert diff and not any(is_backbone(n) for n in diff)

    def test_finetune_moves_backbone(self, small):
        data, vocab = small
        tr = make_trainer(vocab, batch_size=8, epochs=1)
        before = tr.model.snapshot()
        tr.run(data)
        assert any(is_backbone(n) for n in changed(before, tr.model.snapshot()))


class TestSlf:
    @pytest.mark.parametrize("layer", [1, 2, 3])
    def test_focus_mask(self, layer, small):
        data, vocab = small
        tr = make_trainer(vocab, layers=3, batch_size=8)
        before = tr.model.snapshot()
        tr.train_epoch_multitask(data, [layer], focus_names(tr.model, layer), lte=False)
        diff = changed(before, tr.model.snapshot())
        allowed = set(focus_names(tr.model, layer))
        assert diff and diff <= allowed
        assert f"layer.{layer}.ffn.in.weight" in diff
        assert f"classifier.sst.{layer}.weight" in diff

    def test_stage_log(self, small):
        data, vocab = small
        tr = make_trainer(vocab, layers=3, batch_size=16, strategy="slf", epochs=5)
        result = tr.run(data)
        assert result.stage_log == ["S1:L1", "S1:L2", "S1:L3", "S2", "S2"]

    def test_stage2_budget(self):
        assert slf_stage2_epochs(5, 3) == 2
        assert slf_stage2_epochs(2, 4) == 1

    def test_single_layer(self, small):
        data, vocab = small
        tr = make_trainer(vocab, layers=1, strategy="slf", epochs=1, batch_size=16)
        assert tr.run({"sst": data["sst"]}).stage_log == ["S1:L1", "S2"]


class TestAlternating:
    def test_improving_never_switches(self):
        assert alternating_stages([0.1, 0.2, 0.3, 0.4]) == [1, 1, 1, 1]

    def test_flat_switches_after_second(self):
        assert alternating_stages([0.5, 0.5, 0.5]) == [1, 1, 2]

    def test_toggles_back(self):
        sw = AlternatingSwitch(1e-4)
        assert [sw.observe(s) for s in (0.5, 0.5, 0.6, 0.6)] == [False, True, False, True]
        assert sw.stage == 1 and sw.best == 0.6 and sw.best_epoch == 3

    def test_stage1_holds_intermediate_classifiers(self, small):
        data, vocab = small
        tr = make_trainer(vocab, layers=2, batch_size=8)
        names = set(final_stage_names(tr.model))
        assert "classifier.sst.1.weight" not in names and "classifier.sst.2.weight" in names

    def test_needs_dev(self, small):
        data, vocab = small
        tr = make_trainer(vocab, strategy="smart_alternating", epochs=1)
        with pytest.raises(ConfigError):
            tr.run(data, None)

    def test_restores_best(self, small):
        data, vocab = small
        tr = make_trainer(vocab, strategy="smart_alternating", epochs=4, batch_size=8, lr=3e-3)
        dev = {t: ex[:10] for t, ex in synth_small_dev(vocab).items()}
        result = tr.run(data, dev)
        scores = [e.dev_score for e in result.epochs]
        assert result.best_dev == max(scores)
        from exitbert.data import make_batches
        from exitbert.evaluation import quick_dev
        batches = {t: make_batches(ex, 64, tr.model.packing_for(t), vocab, 24)
                   for t, ex in dev.items()}
        assert quick_dev(tr.model, batches)[0] == result.best_dev


def synth_small_dev(vocab):
    return {t: synth_task(t, 10, 99) for t in ("sst", "para", "sts")}


class TestSmartIntegration:
    def test_lambda_zero_bit_identical(self, small):
        data, vocab = small
        runs = []
        for smart in (None, SmartConfig(lambda_s=0.0)):
            tr = make_trainer(vocab, smart=smart, batch_size=8, epochs=2)
            tr.run(data)
            runs.append(tr.model.snapshot())
        assert changed(*runs) == set()

    def test_smart_changes_para_training(self, small):
        data, vocab = small
        runs = []
        for smart in (None, SmartConfig(lambda_s=5.0, epsilon=1e-2, init_sigma=1e-2)):
            tr = make_trainer(vocab, smart=smart, batch_size=8, epochs=1)
            tr.run({"para": data["para"]})
            runs.append(tr.model.snapshot())
        assert changed(*runs)


class TestDeterminism:
    @pytest.mark.parametrize("strategy", ["baseline", "joint", "slf"])
    def test_same_seed_same_params(self, strategy, small):
        data, vocab = small
        snaps = []
        for _ in range(2):
            tr = make_trainer(vocab, strategy=strategy, batch_size=8, epochs=3, lte_enabled=True)
            model = tr.model
            tr.run(data)
            snaps.append(model.snapshot())
        assert changed(*snaps) == set()

    def test_dropout_changes_with_seed(self, small):
        data, vocab = small
        snaps = []
        for seed in (0, 1):
            model = MultitaskModel(tiny_config(len(vocab), dropout_p=0.3),
                                   rng=np.random.default_rng(0))
            tr = Trainer(model, make_optimizer("adamw", model.params, 1e-3),
                         TrainConfig(seed=seed, epochs=1, batch_size=8), vocab)
            tr.run({"sst": data["sst"]})
            snaps.append(model.snapshot())
        assert changed(*snaps)


def test_learnability_quick():
    data = {"sst": synth_task("sst", 60, 5)}
    vocab = build_vocab(e.sentence_a for e in data["sst"])
    model = MultitaskModel(tiny_config(len(vocab), hidden=32, ffn_width=64),
                           rng=np.random.default_rng(0))
    tr = Trainer(model, make_optimizer("adamw", model.params, 3e-3),
                 TrainConfig(epochs=30, batch_size=16), vocab)
    tr.run(data)
    from exitbert.data import make_batches
    from exitbert.evaluation import batched_predictions
    _, preds, golds = batched_predictions(
        tr.model, make_batches(data["sst"], 64, "single", vocab, 24), "sst")
    assert (preds == golds).mean() >= 0.95
