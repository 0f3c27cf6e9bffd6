import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles/synthetic importable

from synthetic import make_rule_corpus  # noqa: E402

from lane.config import RunConfig  # noqa: E402
from lane import pipeline  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(workdir: Path, corpus_path: Path, **tweaks) -> RunConfig:
    """Small-but-real run config shared by pipeline-level tests."""
    config = RunConfig()
    config.workdir = str(workdir)
    config.seed = 7
    config.corpus.input_path = str(corpus_path)
    config.corpus.min_interactions = 1
    config.encoder.dim = 16
    config.encoder.name = "hash"
    config.preferences.m = 3
    config.sequence.n = 10
    config.backbone.blocks = 1
    config.backbone.heads = 2
    config.alignment.heads = 2
    config.alignment.d_k = 8
    config.trainer.dropout = 0.1
    config.trainer.batch_size = 32
    config.trainer.max_epochs = 3
    config.trainer.patience = 3
    config.evaluator.ks = [5, 10]
    config.evaluator.num_negatives = 20
    for key, value in tweaks.items():
        section, leaf = key.split(".")
        setattr(getattr(config, section), leaf, value)
    config.validate()
    return config


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """One fully-run tiny pipeline (prepare/extract/train/evaluate) reused across tests."""
    root = tmp_path_factory.mktemp("trained_run")
    corpus_path = make_rule_corpus(root / "corpus.tsv", num_users=40, num_items=50, length=10)
    config = tiny_config(root / "run", corpus_path)
    pipeline.prepare(config)
    pipeline.extract_prefs(config)
    pipeline.train(config)
    pipeline.evaluate(config, split="test")
    return config
