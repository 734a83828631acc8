from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import make_corpus, make_tree_thesaurus  # noqa: E402

from meshkit import hierarchy as hi  # noqa: E402
from meshkit import pairs as pr  # noqa: E402


@pytest.fixture(scope="session")
def small_thesaurus():
    return make_tree_thesaurus(seed=11, n_nodes=50, roots=("C01", "D02"), multi_tn=6)


@pytest.fixture(scope="session")
def small_graph(small_thesaurus):
    return hi.build_graph(small_thesaurus, branches={"C", "D"})


@pytest.fixture(scope="session")
def small_corpus(small_thesaurus):
    return make_corpus(small_thesaurus, seed=7, n_docs=120)


@pytest.fixture(scope="session")
def small_split(small_corpus, small_thesaurus):
    return pr.split_zero_shot(small_corpus, n_holdout=5, seed=3, th=small_thesaurus)
