import json

import numpy as np
import pytest

from kgrec.datagen import (
    SyntheticConfig,
    generate,
    load_ad_texts,
    load_latent,
    load_user_tags,
    normalize_features,
)
from kgrec.errors import EmptyColumn, InvalidConfig
from kgrec.kg import (
    EntityKind,
    read_entities_tsv,
    read_interactions_jsonl,
    read_triples_tsv,
)


SMALL = dict(n_users=50, n_ads=30, n_products=10, n_categories=4,
             n_interactions=400, n_latent_topics=4, seed=11)


class TestNormalizeFeatures:
    def test_minmax_to_unit_interval(self):
        out = normalize_features(np.array([2.0, 4.0, 6.0]))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_constant_column_maps_to_zero(self):
        out = normalize_features(np.full((4, 2), 3.0))
        np.testing.assert_array_equal(out, np.zeros((4, 2)))

    def test_per_column_independence(self):
        cols = np.array([[0.0, 10.0], [1.0, 30.0]])
        np.testing.assert_allclose(normalize_features(cols),
                                   [[0.0, 0.0], [1.0, 1.0]])

    def test_empty_rejected(self):
        with pytest.raises(EmptyColumn):
            normalize_features(np.array([]))


class TestConfigValidation:
    def test_defaults_valid(self):
        SyntheticConfig().validate()

    @pytest.mark.parametrize("field,value", [
        ("n_users", 0), ("n_ads", -1), ("n_latent_topics", 0),
        ("noise_rate", 1.5), ("avg_tags_per_user", 0.5),
    ])
    def test_invalid_fields(self, field, value):
        cfg = SyntheticConfig(**{field: value})
        with pytest.raises(InvalidConfig):
            cfg.validate()


class TestGenerate:
    def test_deterministic_byte_identical(self, tmp_path):
        cfg = SyntheticConfig(**SMALL)
        b1 = generate(cfg, tmp_path / "one", dump_latent=False)
        b2 = generate(SyntheticConfig(**SMALL), tmp_path / "two",
                      dump_latent=False)
        for name in ("entities.tsv", "triples.tsv", "interactions.jsonl",
                     "ad_text.jsonl", "user_tags.jsonl", "manifest.json"):
            assert (b1.out_dir / name).read_bytes() == \
                (b2.out_dir / name).read_bytes()

    def test_seed_changes_output(self, tmp_path):
        alt = dict(SMALL, seed=12)
        b1 = generate(SyntheticConfig(**SMALL), tmp_path / "one")
        b2 = generate(SyntheticConfig(**alt), tmp_path / "two")
        assert b1.interactions_path.read_bytes() != \
            b2.interactions_path.read_bytes()

    def test_manifest_counts_match_files(self, tiny_bundle):
        manifest = json.loads(tiny_bundle.manifest_path.read_text())
        entities = read_entities_tsv(tiny_bundle.entities_path)
        triples = read_triples_tsv(tiny_bundle.triples_path)
        inter = read_interactions_jsonl(tiny_bundle.interactions_path)
        assert manifest["counts"]["entities"] == len(entities)
        assert manifest["counts"]["triples"] == len(triples)
        assert manifest["counts"]["interactions"] == len(inter)

    def test_files_reparse_cleanly(self, tiny_bundle):
        entities = read_entities_tsv(tiny_bundle.entities_path)
        kinds = {k for _i, k, _l in entities}
        assert kinds == set(EntityKind)
        triples = read_triples_tsv(tiny_bundle.triples_path)
        ids = {i for i, _k, _l in entities}
        for t in triples:
            assert t.head in ids and t.tail in ids
        texts = load_ad_texts(tiny_bundle.ad_text_path)
        tags = load_user_tags(tiny_bundle.user_tags_path)
        assert all(texts.values())
        assert all(tags.values())

    def test_interactions_unique_user_ad_pairs(self, tiny_bundle):
        inter = read_interactions_jsonl(tiny_bundle.interactions_path)
        pairs = [(r.user, r.ad) for r in inter]
        assert len(pairs) == len(set(pairs))
        assert {r.label for r in inter} <= {0, 1}

    def test_tag_count_statistic(self, tmp_path):
        cfg = SyntheticConfig(n_users=2000, n_ads=10, n_products=5,
                              n_categories=4, n_interactions=10,
                              avg_tags_per_user=4.7, n_latent_topics=4,
                              seed=3)
        bundle = generate(cfg, tmp_path / "d")
        tags = load_user_tags(bundle.user_tags_path)
        mean_tags = np.mean([len(v) for v in tags.values()])
        assert abs(mean_tags - 4.7) < 0.2

    def test_text_length_statistic(self, tmp_path):
        cfg = SyntheticConfig(n_users=10, n_ads=1500, n_products=20,
                              n_categories=8, n_interactions=10,
                              avg_text_len=28, n_latent_topics=4, seed=5)
        bundle = generate(cfg, tmp_path / "d")
        texts = load_ad_texts(bundle.ad_text_path)
        mean_len = np.mean([len(t.split()) for t in texts.values()])
        assert abs(mean_len - 28) < 2.0

    def test_single_topic_degenerate(self, tmp_path):
        cfg = SyntheticConfig(n_users=20, n_ads=15, n_products=6,
                              n_categories=3, n_interactions=60,
                              n_latent_topics=1, seed=2)
        bundle = generate(cfg, tmp_path / "d", dump_latent=True)
        latent = load_latent(bundle.latent_path)
        np.testing.assert_array_equal(latent.user_mixtures,
                                      np.ones((20, 1)))
        inter = read_interactions_jsonl(bundle.interactions_path)
        # uniform affinity: clicks dominate, flipped only by the 2% noise
        assert np.mean([r.label for r in inter]) > 0.9


class TestLatentState:
    def test_round_trip(self, tiny_bundle):
        latent = load_latent(tiny_bundle.latent_path)
        assert len(latent.user_ids) == 60
        assert len(latent.ad_ids) == 40
        np.testing.assert_allclose(latent.user_mixtures.sum(axis=1),
                                   np.ones(60), atol=1e-9)

    def test_affinity_matches_dot_product(self, tiny_bundle):
        latent = load_latent(tiny_bundle.latent_path)
        u = latent.user_ids[3]
        got = latent.affinity(u, latent.ad_ids[:5])
        expected = latent.ad_mixtures[:5] @ latent.user_mixtures[3]
        np.testing.assert_allclose(got, expected)

    def test_best_ranker_sorts_by_affinity(self, tiny_bundle):
        latent = load_latent(tiny_bundle.latent_path)
        u = latent.user_ids[0]
        ranked = latent.best_ranker()(u, latent.ad_ids)
        aff = {a: latent.affinity(u, [a])[0] for a in latent.ad_ids}
        vals = [aff[a] for a in ranked]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
