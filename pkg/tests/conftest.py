import numpy as np
import pytest

from digmn.syngen import GeneratorConfig, generate_corpus

# One big seeded corpus shared by the heavyweight tests (LDA recovery, model
# ordering, generator statistics); generating it takes ~20 s, so session scope.
BIG_CORPUS_CONFIG = GeneratorConfig(n_users=10_000, seed=20240601)


@pytest.fixture(scope="session")
def big_corpus():
    return generate_corpus(BIG_CORPUS_CONFIG)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(GeneratorConfig(n_users=400, seed=11))
