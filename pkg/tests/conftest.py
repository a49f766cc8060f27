import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kgrec.kg import EntityKind, RelationKind, Triple, build_graph


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def small_entities():
    return [
        ("u1", EntityKind.USER, "user one"),
        ("u2", EntityKind.USER, "user two"),
        ("a1", EntityKind.AD, "running shoes sale"),
        ("a2", EntityKind.AD, "discount laptops"),
        ("p1", EntityKind.PRODUCT, "shoes"),
        ("c1", EntityKind.CATEGORY, "sports"),
        ("t1", EntityKind.INTEREST_TAG, "running"),
        ("t2", EntityKind.INTEREST_TAG, "tech"),
    ]


def small_triples():
    return [
        Triple("u1", RelationKind.CLICKS, "a1"),
        Triple("u1", RelationKind.INTERESTED_IN, "t1"),
        Triple("u2", RelationKind.INTERESTED_IN, "t2"),
        Triple("a1", RelationKind.PROMOTES, "p1"),
        Triple("p1", RelationKind.BELONGS_TO, "c1"),
        Triple("u1", RelationKind.LIKES_CATEGORY, "c1"),
    ]


@pytest.fixture
def small_graph():
    return build_graph(small_triples(), small_entities())


@pytest.fixture
def ad_texts():
    return {"a1": "running shoes sale", "a2": "discount laptops today"}


@pytest.fixture
def user_tags():
    return {"u1": ["running", "sports"], "u2": ["tech"]}


@pytest.fixture(scope="session")
def tiny_bundle(tmp_path_factory):
    """A small generated dataset shared by the slower integration tests."""
    from kgrec.datagen import SyntheticConfig, generate

    out = tmp_path_factory.mktemp("bundle")
    config = SyntheticConfig(n_users=60, n_ads=40, n_products=12,
                             n_categories=6, n_interactions=900,
                             n_latent_topics=4, seed=7)
    bundle = generate(config, out, dump_latent=True)
    return bundle
