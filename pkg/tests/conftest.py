import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from glyphattn.config import ModelConfig, TrainConfig  # noqa: E402
from glyphattn.glyphdata import CorpusConfig, generate_sample  # noqa: E402

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.load_profile("default")

SMALL_CORPUS = CorpusConfig(count=24, height=16, width=16, n_max=4, alphabet="ABCDEFGH", min_len=1, max_len=2)
SMALL_MODEL = ModelConfig(height=16, width=16, n_max=4, num_classes=8, d_emb=8, d=8, d_align=8, d_img=8,
                          hidden=8, layers=2, T=20)


def small_config(tmp_path, **kw) -> TrainConfig:
    base = dict(total_steps=6, warmup_steps=2, batch_size=4, eval_every=3, eval_count=4,
                model=SMALL_MODEL, out_dir=str(tmp_path / "run"))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_samples():
    return [generate_sample(SMALL_CORPUS, i) for i in range(SMALL_CORPUS.count)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
