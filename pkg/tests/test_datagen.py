import json
import math

import numpy as np
import pytest

from project.corpus import CollectionStats, Passage, PassageCollection, compute_stats
from project.datagen import (
    ExternalQuestionGenerator,
    GenConfig,
    Source,
    TemplateQuestionGenerator,
    TrainingPair,
    gen_ict,
    gen_ngram,
    gen_questions,
    ngram_windows,
    passage_rng,
    read_pairs,
    read_qa_pairs,
    salient_sentences,
    subsample_corpus,
    write_pairs,
)
from project.errors import ConfigError, InputFormatError


def five_sentence_passage(i: int) -> Passage:
    text = " ".join(f"s{i}x{j} word{j}." for j in range(5))
    return Passage.build(f"d{i}#0", "Shared title", text)


class TestIct:
    def test_mask_rate_is_realized(self):
        cfg = GenConfig(ict_max_sentences=5, ict_mask_rate=0.9)
        masked = []
        for i in range(2000):
            samples = gen_ict(five_sentence_passage(i), cfg, passage_rng(0, f"d{i}#0"))
            masked.extend(pair.masked for pair, _ in samples)
        assert len(masked) == 10_000
        assert np.mean(masked) == pytest.approx(0.9, abs=0.02)

    def test_masked_sentence_is_cut_from_positive(self):
        passage = five_sentence_passage(1)
        cfg = GenConfig(ict_mask_rate=1.0)
        for pair, positive in gen_ict(passage, cfg, passage_rng(0, passage.id)):
            assert pair.masked
            assert pair.positive_tokens == positive
            assert positive[:2] == ["shared", "title"]
            assert not set(pair.question_tokens) & {t for t in positive if t.startswith("s1x")}
            assert len(positive) == len(passage.tokens) - len(pair.question_tokens)

    def test_unmasked_positive_is_the_passage(self):
        passage = five_sentence_passage(2)
        cfg = GenConfig(ict_mask_rate=0.0)
        for pair, positive in gen_ict(passage, cfg, passage_rng(0, passage.id)):
            assert not pair.masked
            assert pair.positive_tokens is None
            assert positive == passage.tokens

    def test_draws_distinct_sentences_up_to_limit(self):
        text = " ".join(f"unique{j} here." for j in range(8))
        passage = Passage.build("p#0", None, text)
        samples = gen_ict(passage, GenConfig(ict_max_sentences=3), passage_rng(4, passage.id))
        queries = [tuple(pair.question_tokens) for pair, _ in samples]
        assert len(queries) == 3
        assert len(set(queries)) == 3
        assert all(pair.source is Source.ICT for pair, _ in samples)

    def test_same_seed_same_samples(self):
        passage = five_sentence_passage(3)
        cfg = GenConfig(ict_max_sentences=2)
        first = gen_ict(passage, cfg, passage_rng(11, passage.id))
        second = gen_ict(passage, cfg, passage_rng(11, passage.id))
        assert first == second


class TestNgram:
    def test_window_counts_match_offset_enumeration(self):
        rng = np.random.default_rng(5)
        for length in rng.integers(0, 300, size=50):
            length = int(length)
            if length == 0:
                expected = 0
            elif length <= 8:
                expected = 1
            else:
                expected = (length - 8) // 8 + 1
            assert len(ngram_windows(length, 16, 8)) == expected

    def test_hand_enumerated_passage(self):
        tokens = [f"t{i}" for i in range(20)]
        passage = Passage(id="p#0", text=" ".join(tokens), tokens=tokens)
        pairs = gen_ngram(passage, GenConfig(ngram_n=16, ngram_stride=8))
        assert [pair.question_tokens for pair in pairs] == [tokens[0:16], tokens[8:20]]
        assert all(not pair.masked and pair.source is Source.NGRAM for pair in pairs)

    def test_twenty_four_tokens_give_three_pairs(self):
        tokens = [f"t{i}" for i in range(24)]
        passage = Passage(id="p#0", text=" ".join(tokens), tokens=tokens)
        pairs = gen_ngram(passage, GenConfig(ngram_n=16, ngram_stride=8))
        assert [pair.question_tokens for pair in pairs] == [tokens[0:16], tokens[8:24], tokens[16:24]]

    @pytest.mark.parametrize("length", [8, 32, 35, 100])
    def test_stride_equal_to_window_partitions_tokens(self, length):
        tokens = [f"t{i}" for i in range(length)]
        passage = Passage(id="p#0", text=" ".join(tokens), tokens=tokens)
        pairs = gen_ngram(passage, GenConfig(ngram_n=8, ngram_stride=8))
        joined = [t for pair in pairs for t in pair.question_tokens]
        assert joined == tokens[: (length // 8) * 8]
        assert all(len(pair.question_tokens) == 8 for pair in pairs)

    def test_short_passage_is_one_window(self):
        passage = Passage.build("p#0", None, "just five tokens right here")
        pairs = gen_ngram(passage, GenConfig())
        assert [pair.question_tokens for pair in pairs] == [passage.tokens]

    def test_window_must_cover_stride(self):
        with pytest.raises(ValueError):
            GenConfig(ngram_n=4, ngram_stride=8)


class TestQuestions:
    def test_template_picks_rarest_terms_in_text_order(self):
        stats = CollectionStats(doc_count=10, df={"common": 9, "mid": 4, "rare": 1}, avg_len=5.0)
        generator = TemplateQuestionGenerator(terms=2)
        question = generator.generate(["common", "mid", "rare", "common", "new"], stats)
        assert question == "what is known about rare new"

    def test_template_of_nothing(self):
        stats = CollectionStats(doc_count=1, df={}, avg_len=1.0)
        assert TemplateQuestionGenerator().generate([], stats) is None

    def test_salient_sentences_prefer_rare_terms(self):
        passages = [
            Passage.build("a#0", None, "Common text. Zebra sighting today. Common again."),
            Passage.build("b#0", None, "Common text. Common again."),
        ]
        stats = compute_stats(passages)
        top = salient_sentences(passages[0], stats, k=1)
        assert [s.text for s in top] == ["Zebra sighting today."]
        assert [s.text for s in salient_sentences(passages[1], stats, k=5)] == [
            "Common text.",
            "Common again.",
        ]

    def test_template_pairs(self):
        passages = [
            Passage.build("a#0", None, "Alpha beta gamma. Delta epsilon."),
            Passage.build("b#0", None, "Alpha beta."),
        ]
        stats = compute_stats(passages)
        pairs = gen_questions(passages[0], stats, GenConfig(), TemplateQuestionGenerator())
        questions = [" ".join(pair.question_tokens) for pair in pairs]
        assert questions == [
            "what is known about alpha beta gamma delta epsilon",
            "what is known about alpha beta gamma",
            "what is known about delta epsilon",
        ]
        assert all(pair.source is Source.QGEN for pair in pairs)

    def test_duplicates_and_empty_questions_dropped(self):
        passage = Passage.build("p#0", None, "Some text.")
        stats = compute_stats([passage])
        generator = ExternalQuestionGenerator({"p#0": ["What is X?", "What is X?", "???", "Why Y?"]})
        pairs = gen_questions(passage, stats, GenConfig(), generator)
        assert [pair.question_tokens for pair in pairs] == [["what", "is", "x"], ["why", "y"]]
        assert all(pair.source is Source.EXTERNAL for pair in pairs)

    def test_external_file(self, tmp_path):
        path = tmp_path / "questions.jsonl"
        path.write_text(
            "\n".join(
                json.dumps({"question": q, "passage_id": pid})
                for q, pid in [("How?", "a#0"), ("Why?", "a#0"), ("Where?", "zz#0")]
            ),
            encoding="utf-8",
        )
        generator = ExternalQuestionGenerator.from_file(path)
        collection = PassageCollection.from_passages([Passage.build("a#0", None, "Text.")])
        assert generator.by_passage["a#0"] == ["How?", "Why?"]
        assert generator.unknown_passages(collection) == ["zz#0"]


def chunked_collection(documents: int = 50) -> PassageCollection:
    return PassageCollection.from_passages(
        Passage.build(f"doc{d}#{c}", None, f"body{d} chunk{c}.")
        for d in range(documents)
        for c in range(2)
    )


class TestSubsample:
    def test_full_fraction_is_identity(self):
        collection = chunked_collection()
        assert subsample_corpus(collection, 1.0, seed=0) is collection

    def test_smaller_fraction_keeps_a_subset(self):
        collection = chunked_collection()
        small = {p.id for p in subsample_corpus(collection, 0.3, seed=1).passages}
        large = {p.id for p in subsample_corpus(collection, 0.6, seed=1).passages}
        assert small <= large
        assert 0 < len(small) < len(large) < len(collection)

    def test_documents_keep_all_chunks(self):
        kept = subsample_corpus(chunked_collection(), 0.5, seed=3)
        documents = {p.document_id for p in kept.passages}
        assert len(kept) == 2 * len(documents)
        assert kept.stats.doc_count == len(kept)

    def test_kept_share_is_close_to_fraction(self):
        documents = 10_000
        collection = PassageCollection.from_passages(
            Passage.build(f"doc{d}#0", None, f"body{d}.") for d in range(documents)
        )
        kept = len(subsample_corpus(collection, 0.2, seed=7))
        sigma = math.sqrt(documents * 0.2 * 0.8)
        assert abs(kept - 0.2 * documents) <= 3 * sigma

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_fraction_out_of_range(self, fraction):
        with pytest.raises(ConfigError):
            subsample_corpus(chunked_collection(2), fraction, seed=0)


class TestPairsFile:
    def test_masked_positive_survives(self, tmp_path):
        pairs = [
            TrainingPair(
                question_tokens=["a", "b"],
                passage_id="p#0",
                source=Source.ICT,
                masked=True,
                positive_tokens=["t", "c"],
            ),
            TrainingPair(question_tokens=["q"], passage_id="p#1", source=Source.NGRAM),
        ]
        path = tmp_path / "pairs.jsonl"
        assert write_pairs(pairs, path) == 2
        assert read_pairs(path) == pairs
        assert "masked" not in path.read_text(encoding="utf-8").splitlines()[1]

    def test_bad_record_is_named(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        good = json.dumps({"question": "q", "passage_id": "p#0", "source": "QGEN"})
        path.write_text(good + "\n" + json.dumps({"question": "q"}) + "\n", encoding="utf-8")
        with pytest.raises(InputFormatError, match="line 2"):
            read_pairs(path)

    def test_question_without_tokens(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text(
            json.dumps({"question": "?!", "passage_id": "p#0", "source": "QGEN"}) + "\n",
            encoding="utf-8",
        )
        with pytest.raises(InputFormatError, match="line 1"):
            read_pairs(path)


def test_passage_rng_depends_only_on_seed_and_key():
    a = passage_rng(0, "x#0").random(3)
    passage_rng(0, "y#0").random(10)
    np.testing.assert_array_equal(a, passage_rng(0, "x#0").random(3))
    assert not np.array_equal(a, passage_rng(1, "x#0").random(3))


class TestQaPairs:
    def test_records_become_self_contained_pairs(self, tmp_path):
        path = tmp_path / "qa.jsonl"
        path.write_text(
            "\n".join(
                json.dumps(record)
                for record in [
                    {"question": "Who wrote Hamlet?", "passage": "Shakespeare wrote it.", "title": "Hamlet"},
                    {"question": "Boiling point?", "passage": "Water boils at 100 C.", "id": "nq-7"},
                ]
            ),
            encoding="utf-8",
        )
        pairs = read_qa_pairs(path)
        assert [pair.passage_id for pair in pairs] == ["qa-1", "nq-7"]
        assert pairs[0].positive_tokens == ["hamlet", "shakespeare", "wrote", "it"]
        assert pairs[1].question_tokens == ["boiling", "point"]
        assert all(pair.source is Source.QA and not pair.masked for pair in pairs)

        out = tmp_path / "pairs.jsonl"
        write_pairs(pairs, out)
        assert read_pairs(out) == pairs

    def test_passage_without_tokens(self, tmp_path):
        path = tmp_path / "qa.jsonl"
        path.write_text(
            json.dumps({"question": "Why?", "passage": "Because."}) + "\n"
            + json.dumps({"question": "What?", "passage": "..."}) + "\n",
            encoding="utf-8",
        )
        with pytest.raises(InputFormatError, match="line 2"):
            read_qa_pairs(path)
