"""Tests for PMI counting, topic prediction and the binary table format."""

import itertools
import math

import numpy as np
import pytest

from typedq.corpus import CorpusPair, TypeLexicons, load_scenes, synth_corpus
from typedq.errors import CheckpointFormatError, InvalidInputError, UndefinedPairError
from typedq.pmi import (
    build_table,
    decode_table,
    encode_table,
    export_tsv,
    load_table,
    pmi,
    predict_topics,
    rel,
    save_table,
)


def _pairs(*items):
    return [CorpusPair(tuple(p.split()), tuple(r.split())) for p, r in items]


def _random_pairs(seed: int, n: int = 40):
    rng = np.random.default_rng(seed)
    words = list("abcdefgh")
    out = []
    for _ in range(n):
        post = " ".join(words[i] for i in rng.integers(len(words), size=rng.integers(1, 5)))
        resp = " ".join(words[i] for i in rng.integers(len(words), size=rng.integers(1, 5)))
        out.append((post, resp))
    return _pairs(*out)


class TestBuildTable:

    def test_counts(self):
        table = build_table(_pairs(("a", "x"), ("a", "y")))
        assert table.n_pairs == 2
        assert table.post_doc_count["a"] == 2
        assert table.joint_count[("a", "x")] == 1
        assert table.joint_count[("a", "y")] == 1

    def test_repeated_tokens_count_once(self):
        table = build_table(_pairs(("a a a", "x x")))
        assert table.post_doc_count["a"] == 1
        assert table.resp_doc_count["x"] == 1
        assert table.joint_count[("a", "x")] == 1

    def test_min_count_drops_rare_joints(self):
        table = build_table(_pairs(("a", "x"), ("a", "y")), min_count=2)
        assert table.joint_count == {}
        assert table.post_doc_count == {"a": 2}

    def test_empty_stream(self):
        with pytest.raises(InvalidInputError):
            build_table([])

    def test_bad_min_count(self):
        with pytest.raises(InvalidInputError):
            build_table(_pairs(("a", "x")), min_count=0)


class TestPmi:

    def test_independent_pairs(self):
        table = build_table(_pairs(("a", "x"), ("b", "y")))
        assert math.isclose(pmi(table, "a", "x"), math.log(2), rel_tol=1e-12)

    def test_undefined_pair(self):
        table = build_table(_pairs(("a", "x"), ("b", "y")))
        with pytest.raises(UndefinedPairError):
            pmi(table, "a", "y")

    def test_unknown_token(self):
        table = build_table(_pairs(("a", "x")))
        with pytest.raises(UndefinedPairError):
            pmi(table, "zzz", "x")

    def test_asymmetric(self):
        table = build_table(_pairs(("a", "x"), ("a", "y"), ("x", "a")))
        assert pmi(table, "a", "x") != pmi(table, "x", "a")

    @pytest.mark.parametrize("seed", range(20))
    def test_duplicating_corpus_keeps_pmi(self, seed):
        pairs = _random_pairs(seed)
        once = build_table(pairs)
        twice = build_table(pairs + pairs)
        for (x, y) in once.joint_count:
            assert math.isclose(pmi(once, x, y), pmi(twice, x, y), rel_tol=1e-12, abs_tol=1e-12)


class TestRel:

    def test_sum_over_post_tokens(self):
        table = build_table(_pairs(("a", "x"), ("b", "y")))
        assert math.isclose(rel(table, "x", ["a", "b"]), 2.0)

    def test_duplicate_post_tokens_ignored(self):
        table = build_table(_pairs(("a", "x"), ("b", "y")))
        assert rel(table, "x", ["a", "a", "b"]) == rel(table, "x", ["a", "b"])

    def test_empty_post(self):
        table = build_table(_pairs(("a", "x")))
        with pytest.raises(InvalidInputError):
            rel(table, "x", [])


class TestPredictTopics:

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        pairs = _random_pairs(seed)
        table = build_table(pairs)
        post = ["a", "c", "e"]
        n = 3
        prediction = predict_topics(table, post, n)
        candidates = sorted(table.resp_doc_count)
        scores = [(k, rel(table, k, post)) for k in candidates]
        expected = sorted([kv for kv in scores if kv[1] > 0], key=lambda kv: (-kv[1], kv[0]))[:n]
        assert prediction.words == [k for k, _ in expected]
        np.testing.assert_allclose([s for _, s in prediction.topics], [s for _, s in expected])

    def test_synthetic_posts_rank_their_scene(self, lexicons):
        table = build_table(synth_corpus(7, 2000))
        for scene in load_scenes():
            words = predict_topics(table, ("i", scene.verb, scene.topic), 20, lexicons).words
            assert set(words[:len(scene.related)]) == set(scene.related)
            assert not set(words) & {"like", "see", "get", "find", "buy", "gave"}

    def test_n_one(self):
        table = build_table(_pairs(("a", "x"), ("a", "x y"), ("b", "y")))
        assert predict_topics(table, ["a"], 1).words == ["x"]

    def test_scores_non_increasing(self):
        table = build_table(_random_pairs(5, 80))
        scores = [s for _, s in predict_topics(table, ["a", "b"], 8).topics]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_no_cooccurrence(self):
        table = build_table(_pairs(("a", "x")))
        assert predict_topics(table, ["unseen"], 5).topics == []

    def test_lexicon_restricts_candidates(self):
        table = build_table(_pairs(("i fish", "the trout ?"), ("i fish", "the rod ?")))
        lex = TypeLexicons(frozenset({"?"}), {"trout": "n", "rod": "n"})
        assert set(predict_topics(table, ["fish"], 10, lex).words) == {"trout", "rod"}

    def test_bad_n(self):
        table = build_table(_pairs(("a", "x")))
        with pytest.raises(InvalidInputError):
            predict_topics(table, ["a"], 0)


class TestPersistence:

    def test_save_load(self, tmp_path, small_corpus):
        table = build_table(small_corpus, min_count=2)
        path = str(tmp_path / "table.pmi")
        save_table(path, table)
        loaded = load_table(path)
        assert loaded == table
        for pair in itertools.islice(loaded.joint_count, 10):
            assert pmi(loaded, *pair) == pmi(table, *pair)

    def test_trailing_bytes(self):
        data = encode_table(build_table(_pairs(("a", "x"))))
        with pytest.raises(CheckpointFormatError, match="trailing"):
            decode_table(data + b"\x00")

    def test_truncated(self):
        data = encode_table(build_table(_pairs(("a", "x"))))
        with pytest.raises(CheckpointFormatError, match="truncated"):
            decode_table(data[:-1])

    def test_bad_magic(self):
        with pytest.raises(CheckpointFormatError):
            decode_table(b"NOPE" + bytes(16))

    def test_export_tsv(self, tmp_path):
        path = tmp_path / "table.tsv"
        export_tsv(str(path), build_table(_pairs(("a", "x"), ("b", "y"))))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[1].startswith("post_token\t")
        assert lines[2] == f"a\tx\t1\t1\t1\t{math.log(2):.6f}"
