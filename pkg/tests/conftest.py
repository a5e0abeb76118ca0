import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from exitbert.data import TASKS, build_vocab, synth_task  # noqa: E402
from exitbert.encoder import EncoderConfig  # noqa: E402
from exitbert.model import MultitaskModel  # noqa: E402


def tiny_config(vocab_size=16, **kw):
    base = dict(num_layers=2, hidden=8, num_heads=2, ffn_width=16, dropout_p=0.0,
                vocab_size=vocab_size, max_len=24)
    base.update(kw)
    return EncoderConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_small():
    data = {t: synth_task(t, 40, 3) for t in TASKS}
    corpus = [e.sentence_a for ex in data.values() for e in ex] + \
        [e.sentence_b for ex in data.values() for e in ex if e.sentence_b]
    return data, build_vocab(corpus)


@pytest.fixture
def tiny_model(synth_small):
    _, vocab = synth_small
    return MultitaskModel(tiny_config(len(vocab)), rng=np.random.default_rng(7))


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the outcome is whatever the test body does."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])
    state = {"detail": ""}
    yield state
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    lines.append(f"{request.node.name}: {'PASS' if ok else 'FAIL'} {state['detail']}".rstrip())
    print(lines[-1])


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
