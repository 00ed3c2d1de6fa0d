"""Tests for the metrics, the pattern classifier and the generation driver."""

import json
import math

import numpy as np
import pytest

from typedq.corpus import CorpusPair, Vocabulary, WordType, build_vocab
from typedq.errors import DataFormatError, InvalidInputError
from typedq.evalgen import (
    DETAIL_COLUMNS,
    PATTERN_CLASSES,
    Generation,
    PatternClass,
    classify_pattern,
    distinct_n,
    evaluate,
    generate,
    load_pattern_rules,
    pattern_histogram,
    pattern_kl,
    perplexity,
    perplexity_from_nll,
    predicted_partition,
    question_alignment,
    trr,
    type_alignment,
    write_detail_csv,
    write_metric_report,
)
from typedq.model import DecoderTrace, ModelConfig, ModelParams, TraceStep, batch_pairs, loss
from typedq.pmi import build_table


def _model(variant: str, vocab: Vocabulary, seed: int = 0) -> ModelParams:
    config = ModelConfig(variant=variant, vocab_size=len(vocab), d_emb=4, d_hidden=6, n_layers=1)
    return ModelParams.init(config, np.random.default_rng(seed))


class TestPerplexity:

    def test_from_nll(self):
        assert math.isclose(perplexity_from_nll(math.log(2) + math.log(8), 2), 4.0, rel_tol=1e-12)

    def test_certain_model(self):
        assert perplexity_from_nll(0.0, 7) == 1.0

    def test_no_tokens(self):
        with pytest.raises(InvalidInputError):
            perplexity_from_nll(1.0, 0)

    def test_uniform_model(self, lexicons):
        vocab = Vocabulary(["<pad>", "<s>", "</s>", "<unk>"] + [f"w{i}" for i in range(96)])
        params = _model("plain", vocab)
        params["plain.out.W"].values[...] = 0.0
        O = WordType.ORDINARY
        pairs = [CorpusPair(("w1", "w5"), ("w2", "w3"), (O, O, O)), CorpusPair(("w9",), ("w4",), (O, O))]
        value = perplexity(params, pairs, vocab, lexicons, batch_size=1)
        assert math.isclose(value, 100.0, rel_tol=1e-9)

    def test_empty(self, lexicons):
        vocab = Vocabulary(["<pad>", "<s>", "</s>", "<unk>", "a"])
        with pytest.raises(InvalidInputError):
            perplexity(_model("plain", vocab), [], vocab, lexicons)

    def test_htd_needs_pmi_table(self, lexicons, small_corpus):
        vocab = build_vocab(small_corpus, 1000)
        with pytest.raises(InvalidInputError, match="PMI"):
            perplexity(_model("htd", vocab), small_corpus[:2], vocab, lexicons)

    def test_htd_ignores_reference_tags(self, lexicons, small_corpus):
        vocab = build_vocab(small_corpus, 1000)
        table = build_table(small_corpus)
        params = _model("htd", vocab, seed=4)
        pairs = small_corpus[:10]
        retyped = [p.with_types([WordType.ORDINARY] * len(p.target)) for p in pairs]
        assert perplexity(params, pairs, vocab, lexicons, table) == perplexity(params, retyped, vocab, lexicons, table)

    def test_htd_scores_predicted_not_gold_partition(self, lexicons, small_corpus):
        vocab = build_vocab(small_corpus, 1000)
        table = build_table(small_corpus)
        params = _model("htd", vocab, seed=4)
        pairs = small_corpus[:10]
        gold = loss(params, batch_pairs(pairs, vocab, vocab.ids_of(lexicons.interrogatives)), lam=0.0, mode="infer")
        predicted = [predicted_partition(vocab, p.post, table, lexicons)[0] for p in pairs]
        batch = batch_pairs(pairs, vocab, vocab.ids_of(lexicons.interrogatives), partitions=predicted)
        scored = loss(params, batch, lam=0.0, mode="infer")
        value = perplexity(params, pairs, vocab, lexicons, table)
        assert math.isclose(value, perplexity_from_nll(scored.phi1.item(), scored.n_tokens), rel_tol=1e-12)
        assert not math.isclose(value, perplexity_from_nll(gold.phi1.item(), gold.n_tokens), rel_tol=1e-9)

    def test_predicted_partition_types(self, lexicons, small_corpus):
        vocab = build_vocab(small_corpus, 1000)
        partition, prediction = predicted_partition(vocab, small_corpus[0].post, build_table(small_corpus), lexicons)
        assert prediction.words
        for word in prediction.words:
            assert partition.type_of(vocab.id_of(word)) == WordType.TOPIC
        assert partition.type_of(vocab.id_of("?")) == WordType.INTERROGATIVE


class TestDistinct:

    def test_unigrams(self):
        assert distinct_n([["a", "b"], ["a", "c"]], 1) == 0.75

    def test_bigrams_over_tokens(self):
        assert distinct_n([["a", "b"], ["a", "c"]], 2) == 0.5

    def test_bigrams_over_bigrams(self):
        assert distinct_n([["a", "b"], ["a", "c"]], 2, denominator="bigrams") == 1.0

    def test_identical_single_tokens(self):
        assert distinct_n([["a"]] * 4, 1) == 0.25

    def test_all_unique(self):
        assert distinct_n([["a", "b"], ["c"]], 1) == 1.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(4)
        responses = [[str(t) for t in rng.integers(6, size=rng.integers(1, 6))] for _ in range(30)]
        shuffled = [responses[i] for i in rng.permutation(len(responses))]
        for n in (1, 2):
            assert distinct_n(responses, n) == distinct_n(shuffled, n)

    def test_empty_response(self):
        with pytest.raises(InvalidInputError):
            distinct_n([["a"], []], 1)


class TestTrr:

    def test_one_in_three(self):
        assert trr([["a"], ["b"], ["c"]], [["a"], ["x"], ["y"]]) == pytest.approx(1 / 3)

    def test_all_topical(self):
        assert trr([["a", "b"], ["c"]], [["b"], ["c", "d"]]) == 1.0

    def test_no_predictions(self):
        assert trr([["a"], ["b"]], [[], []]) == 0.0

    def test_misaligned(self):
        with pytest.raises(InvalidInputError):
            trr([["a"]], [["a"], ["b"]])


class TestClassifyPattern:

    @pytest.mark.parametrize("question,expected", [
        ("what is this ?", PatternClass.WHAT),
        ("really ?", PatternClass.YES_NO),
        ("how many people ?", PatternClass.HOW_MANY),
        ("how was it ?", PatternClass.HOW),
        ("why not ?", PatternClass.WHY),
        ("where did you go ?", PatternClass.WHERE),
        ("do you like tea or coffee ?", PatternClass.ALTERNATIVE),
        ("do you like tea ?", PatternClass.YES_NO),
        ("nice ?", PatternClass.OTHER),
    ])
    def test_examples(self, lexicons, question, expected):
        assert classify_pattern(question.split(), lexicons) == expected

    def test_empty(self, lexicons):
        with pytest.raises(InvalidInputError):
            classify_pattern([], lexicons)

    def test_eleven_classes(self):
        assert len(PATTERN_CLASSES) == 11

    def test_histogram_sums_to_question_count(self, lexicons, small_corpus):
        questions = [p.response for p in small_corpus] + [()]
        hist = pattern_histogram(questions, lexicons)
        assert hist.sum() == len(questions)
        assert hist[PATTERN_CLASSES.index(PatternClass.OTHER)] >= 1

    def test_bad_rule_file(self, tmp_path):
        path = tmp_path / "patterns.tsv"
        path.write_text("Whatever\twhat\n", encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_pattern_rules(str(path))


class TestPatternKl:

    def test_identical(self):
        counts = np.arange(11, dtype=float)
        assert pattern_kl(counts, counts) == 0.0

    @pytest.mark.parametrize("seed", range(100))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        assert pattern_kl(rng.integers(0, 20, 11), rng.integers(0, 20, 11)) >= 0.0

    def test_hand_value(self):
        reference = np.zeros(11)
        reference[0] = 2
        model = np.zeros(11)
        model[1] = 2
        assert math.isclose(pattern_kl(model, reference), 2 / 13 * math.log(3), rel_tol=1e-12)

    def test_wrong_length(self):
        with pytest.raises(InvalidInputError):
            pattern_kl(np.ones(10), np.ones(10))


class TestGeneration:

    @pytest.fixture
    def setup(self, small_corpus):
        vocab = build_vocab(small_corpus, 1000)
        return vocab, build_table(small_corpus)

    @pytest.mark.parametrize("variant", ["std", "htd", "plain"])
    def test_deterministic(self, setup, lexicons, small_corpus, variant):
        vocab, table = setup
        params = _model(variant, vocab, seed=1)
        post = small_corpus[0].post
        first = generate(params, vocab, post, table, lexicons, max_len=10)
        second = generate(params, vocab, post, table, lexicons, max_len=10)
        assert first.tokens == second.tokens
        assert len(first.tokens) <= 10
        assert first.ended == (len(first.tokens) < len(first.trace))

    def test_out_of_vocabulary_post(self, setup, lexicons):
        vocab, table = setup
        result = generate(_model("htd", vocab), vocab, ["zzq", "qqz"], table, lexicons, max_len=5)
        assert result.topics == []
        assert len(result.tokens) <= 5

    def test_sampling_needs_rng(self, setup, lexicons):
        vocab, table = setup
        with pytest.raises(InvalidInputError):
            generate(_model("htd", vocab), vocab, ["i"], table, lexicons, sample=True)

    @pytest.mark.parametrize("variant", ["std", "htd", "plain"])
    def test_evaluate(self, setup, lexicons, small_corpus, variant, tmp_path):
        vocab, table = setup
        pairs = small_corpus[:8]
        report, rows = evaluate(_model(variant, vocab, seed=2), vocab, pairs, table, lexicons, max_len=6)
        assert report.n_posts == 8
        assert report.perplexity > 1.0
        for value in (report.distinct1, report.distinct2, report.trr, report.eos_rate):
            assert 0.0 <= value <= 1.0
        assert report.pattern_kl >= 0.0
        assert sum(report.pattern_counts.values()) == 8
        if variant == "plain":
            assert report.type_alignment is None
        assert len(rows) == 8
        assert set(rows[0]) == set(DETAIL_COLUMNS)

        write_metric_report(str(tmp_path / "report.json"), report)
        loaded = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert loaded["variant"] == variant
        write_detail_csv(str(tmp_path / "detail.csv"), rows)
        lines = (tmp_path / "detail.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(DETAIL_COLUMNS)
        assert len(lines) == 9


def _traced(*steps) -> Generation:
    trace = DecoderTrace([TraceStep(i, None if probs is None else np.array(probs), [], 4, ty)
                          for i, (probs, ty) in enumerate(steps)])
    return Generation(("i",), ["what"] * len(steps), [], trace, True)


class TestTypeAlignment:

    def test_per_question(self):
        aligned = _traced(([0.8, 0.1, 0.1], WordType.INTERROGATIVE), ([0.1, 0.1, 0.8], WordType.ORDINARY))
        split = _traced(([0.8, 0.1, 0.1], WordType.INTERROGATIVE), ([0.2, 0.7, 0.1], WordType.INTERROGATIVE))
        no_interrogative = _traced(([0.1, 0.8, 0.1], WordType.TOPIC))
        assert question_alignment([aligned, split, no_interrogative]) == 0.5
        assert type_alignment([aligned, split, no_interrogative]) == 2 / 3

    def test_plain_has_none(self):
        assert question_alignment([_traced((None, WordType.INTERROGATIVE))]) is None
        assert type_alignment([_traced((None, WordType.INTERROGATIVE))]) is None

    def test_no_interrogative_emitted(self):
        assert question_alignment([_traced(([0.1, 0.8, 0.1], WordType.TOPIC))]) is None
