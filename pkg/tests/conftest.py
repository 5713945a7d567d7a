from pathlib import Path

import numpy as np
import pytest

from fsmn.data import EOS_ID, make_batch
from fsmn.model import ModelConfig, init_parameters, randomize_for_check

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(vocab_size=7, context_window=2, embed_dim=3, hidden_dims=(4, 4), memory_at=(1,), memory_order=2)


def random_sentences(rng, vocab_size, count, min_len=2, max_len=7):
    out = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        out.append(np.append(rng.integers(EOS_ID + 1, vocab_size, size=n - 1), EOS_ID))
    return out


@pytest.fixture
def tiny_batch(tiny_config):
    rng = np.random.default_rng(7)
    return make_batch(random_sentences(rng, tiny_config.vocab_size, 2, 4, 6), tiny_config.context_window)


@pytest.fixture
def tiny_params(tiny_config):
    return randomize_for_check(init_parameters(tiny_config, seed=3), tiny_config, seed=4)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for marker in report.keywords:
        if marker.startswith("criterion_"):
            key = int(marker.split("_")[1])
            prev = _CRITERIA.get(key, True)
            _CRITERIA[key] = prev and report.passed


def pytest_configure(config):
    for n in range(1, 9):
        config.addinivalue_line("markers", f"criterion_{n}: acceptance criterion {n}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        status = "PASS" if _CRITERIA[key] else "FAIL"
        terminalreporter.write_line(f"criterion {key}: {status}")
