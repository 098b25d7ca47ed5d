"""Session fixtures: a deterministic corpus and budgeted trained models.

Training artifacts are cached on disk under tests/_cache keyed by config, so
repeated pytest runs (and the acceptance suite) reuse one training run.
Fixtures always return the checkpoint-loaded variant, so every test sees the
exact float32-rounded parameters a user would load.
"""

import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cascadevq import containers
from cascadevq.corpus import default_specs, generate_corpus
from cascadevq.prior import PriorConfig, train_prior
from cascadevq.refiner import RefinerTrainConfig, train_refiner
from cascadevq.tokenizer import VqvaeConfig, train_vqvae

CACHE = Path(__file__).parent / "_cache"

CORPUS_SEED = 0
CORPUS_PER_FAMILY = 20
TOKENIZER_CONFIG = VqvaeConfig(epochs=300, seed=0, lr=2e-4, hidden=64)
PRIOR_CONFIG = PriorConfig(epochs=200, seed=0)
REFINER_CONFIG = RefinerTrainConfig(epochs=30, seed=0)


def _key(tag, config) -> str:
    blob = json.dumps(dataclasses.asdict(config) if dataclasses.is_dataclass(
        config) else config, sort_keys=True, default=str)
    return f"{tag}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}.cvq"


def _cached(name, build, save, load):
    CACHE.mkdir(exist_ok=True)
    path = CACHE / name
    if not path.exists():
        save(path, build())
    return load(path)


@pytest.fixture(scope="session")
def corpus():
    name = _key("corpus", {"seed": CORPUS_SEED, "n": CORPUS_PER_FAMILY})
    return _cached(name,
                   lambda: generate_corpus(default_specs(), CORPUS_PER_FAMILY,
                                           seed=CORPUS_SEED),
                   containers.save_corpus, containers.load_corpus)


@pytest.fixture(scope="session")
def vqvae(corpus):
    train_seqs, _ = corpus.normalized("train")
    name = _key("vqvae", TOKENIZER_CONFIG)
    return _cached(name,
                   lambda: train_vqvae(train_seqs, TOKENIZER_CONFIG)[0],
                   containers.save_vqvae, containers.load_vqvae)


@pytest.fixture(scope="session")
def prior(corpus, vqvae):
    train_seqs, train_labels = corpus.normalized("train")
    name = _key("prior", {"prior": dataclasses.asdict(PRIOR_CONFIG),
                          "vqvae": _key("vqvae", TOKENIZER_CONFIG)})

    def build():
        tokens = [vqvae.tokenize(s) for s in train_seqs]
        return train_prior(tokens, train_labels, vqvae.codebook,
                           vqvae.schedule, PRIOR_CONFIG)[0]

    return _cached(name, build, containers.save_prior, containers.load_prior)


@pytest.fixture(scope="session")
def refiner(corpus, vqvae):
    train_seqs, _ = corpus.normalized("train")
    name = _key("refiner", {"refiner": dataclasses.asdict(REFINER_CONFIG),
                            "vqvae": _key("vqvae", TOKENIZER_CONFIG)})
    return _cached(name,
                   lambda: train_refiner(vqvae, train_seqs,
                                         REFINER_CONFIG)[0],
                   containers.save_refiner, containers.load_refiner)
