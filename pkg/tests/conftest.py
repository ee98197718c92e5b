import numpy as np
import pytest

from beltwear.dataset import AudioClip, full_corpus_records, synthesize_corpus
from beltwear.segmentation import SegmentedCorpus, segment_corpus, write_segmented


def small_records():
    """15 records of one configuration: every wear level and repetition, centre position."""
    return [
        r
        for r in full_corpus_records()
        if r.feed_speed == 14 and r.grit_size == 150 and r.material == "soft" and r.position == "center"
    ]


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    synthesize_corpus(11, out, records=small_records())
    return out


@pytest.fixture(scope="session")
def small_segmentation(small_data_dir):
    return segment_corpus(small_data_dir)


@pytest.fixture(scope="session")
def small_seg_dir(small_segmentation, tmp_path_factory):
    out = tmp_path_factory.mktemp("segmented")
    write_segmented(small_segmentation, out)
    return out


@pytest.fixture(scope="session")
def toy_corpus():
    """All 810 records with 0.15 s noise clips whose level grows with wear; cheap to featurise."""
    rng = np.random.default_rng(123)
    records = full_corpus_records()
    n = 6615

    def clip(level):
        return AudioClip(level * rng.standard_normal(n), 44100)

    analysis = [clip(0.05 * (1 + r.wear_level) * (1 + 0.1 * (r.feed_speed - 14))) for r in records]
    pre = [clip(0.01) for _ in records]
    post = [clip(0.015) for _ in records]
    return SegmentedCorpus(records, analysis, pre, post)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(name: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
