import time

import numpy as np
import pytest

from mobilequant.corpus import bundled_tokens, split
from mobilequant.model import ModelConfig, init_model
from mobilequant.numeric import tune_allocator
from mobilequant.pretrain import PretrainConfig, pretrain

tune_allocator()

_VERDICTS: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    """Keep one verdict line per acceptance criterion for the terminal summary."""
    _VERDICTS.append((criterion, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.fixture(scope="session")
def tokens() -> np.ndarray:
    return bundled_tokens()


@pytest.fixture(scope="session")
def held(tokens) -> np.ndarray:
    return split(tokens)[1]


@pytest.fixture(scope="session")
def toy(tokens):
    """The trained toy model used by every directional check."""
    return pretrain(tokens, ModelConfig(), PretrainConfig()).model


@pytest.fixture(scope="session")
def small_config() -> ModelConfig:
    return ModelConfig(vocab=32, d_model=16, n_heads=2, d_ff=32, n_blocks=1)


@pytest.fixture
def small_model(small_config):
    return init_model(small_config, seed=3)
