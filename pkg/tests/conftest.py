import dataclasses

import pytest

from boundloop.features import FeatureConfig
from boundloop.predictor import TrainConfig
from boundloop.selftrain import LoopConfig, prepare_corpus
from boundloop.synthcorpus import SynthSpec, synth_corpus


def small_corpus(name="syn", n=20, seed=0, lexicon_seed=None, with_alignment=True):
    spec = SynthSpec(n_utterances=n, seed=seed, lexicon_seed=lexicon_seed)
    sc = synth_corpus(spec)
    return prepare_corpus(name, sc.clips, sc.vads, FeatureConfig(),
                          sc.alignment if with_alignment else None)


def quick_loop(**kw):
    train = TrainConfig(max_updates=20, warmup_updates=5, dev_every=10, batch_utterances=4,
                        hidden=(16, 8), context_radius=2, peak_lr=1e-3)
    cfg = LoopConfig(max_iterations=2, train=train, augment=None, dev_fraction=0.2)
    return dataclasses.replace(cfg, **kw)


@pytest.fixture(scope="session")
def tiny():
    return small_corpus()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record_acceptance(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
