import json
import math

import pytest

from project.corpus import (
    CollectionStats,
    Passage,
    PassageCollection,
    compute_stats,
    document_id,
    idf,
    ingest,
    load_collection,
    save_collection,
)
from project.errors import (
    ChunkingError,
    DuplicateIdError,
    EmptyCollectionError,
    InputFormatError,
)


@pytest.fixture
def two_docs(write_corpus):
    return write_corpus(
        [
            {"id": "d1", "title": "Heart failure", "text": "Beta blockers help. They lower the rate."},
            {"id": "d2", "text": "Statins lower cholesterol."},
        ]
    )


class TestIngest:
    def test_two_documents(self, two_docs):
        collection = ingest(two_docs, max_tokens=200)
        assert [p.id for p in collection.passages] == ["d1#0", "d2#0"]
        first = collection.get("d1#0")
        assert first.title == "Heart failure"
        assert first.tokens[:2] == ["heart", "failure"]
        assert collection.stats.doc_count == 2

    def test_long_record_is_chunked(self, write_corpus):
        text = " ".join(f"w{i} x y z." for i in range(20))
        path = write_corpus([{"id": "long", "title": "T", "text": text}])
        collection = ingest(path, max_tokens=9)
        assert [p.id for p in collection.passages] == [f"long#{i}" for i in range(10)]
        assert all(len(p.tokens) <= 9 for p in collection.passages)
        assert {p.document_id for p in collection.passages} == {"long"}

    def test_malformed_line_is_named(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        lines = [json.dumps({"id": f"d{i}", "text": "Fine."}) for i in range(6)]
        lines.append('{"id": "d6", "text": ')
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(InputFormatError) as excinfo:
            ingest(path, max_tokens=200)
        assert excinfo.value.line == 7
        assert "line 7" in str(excinfo.value)

    def test_missing_text_field(self, write_corpus):
        path = write_corpus([{"id": "d1", "title": "no body"}])
        with pytest.raises(InputFormatError, match="line 1"):
            ingest(path, max_tokens=200)

    def test_duplicate_ids(self, write_corpus):
        path = write_corpus([{"id": "a", "text": "One."}, {"id": "a", "text": "Two."}])
        with pytest.raises(DuplicateIdError, match="line 2"):
            ingest(path, max_tokens=200)

    @pytest.mark.parametrize("record_id", ["", "two words", "tab\tid"])
    def test_id_must_be_one_word(self, write_corpus, record_id):
        path = write_corpus([{"id": "ok", "text": "One."}, {"id": record_id, "text": "Two."}])
        with pytest.raises(InputFormatError, match="line 2"):
            ingest(path, max_tokens=200)

    def test_title_longer_than_budget(self, write_corpus):
        path = write_corpus([{"id": "a", "title": "a very long title", "text": "Body."}])
        with pytest.raises(ChunkingError, match="line 1"):
            ingest(path, max_tokens=3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputFormatError):
            ingest(tmp_path / "absent.jsonl", max_tokens=200)

    def test_empty_corpus(self, write_corpus):
        collection = ingest(write_corpus([]), max_tokens=200)
        assert len(collection) == 0
        assert collection.stats is None
        with pytest.raises(EmptyCollectionError):
            collection.require_stats()

    def test_record_without_sentences_is_skipped(self, write_corpus):
        path = write_corpus([{"id": "a", "text": "   "}, {"id": "b", "text": "Kept."}])
        assert [p.id for p in ingest(path, max_tokens=200).passages] == ["b#0"]


class TestStats:
    def test_df_and_avg_len(self):
        passages = [
            Passage.build("a", None, "x y y"),
            Passage.build("b", None, "y z"),
            Passage.build("c", "x", ""),
        ]
        stats = compute_stats(passages)
        assert stats.doc_count == 3
        assert stats.df == {"x": 2, "y": 2, "z": 1}
        assert stats.avg_len == pytest.approx(6 / 3, rel=1e-9)

    def test_empty_passages_only(self):
        stats = compute_stats([Passage(id="a", text="", tokens=[])])
        assert stats.avg_len == 1.0

    def test_idf_is_smoothed_and_non_negative(self):
        stats = CollectionStats(doc_count=4, df={"all": 4, "one": 1}, avg_len=3.0)
        assert idf(stats, "one") == pytest.approx(math.log(1 + 3.5 / 1.5))
        assert idf(stats, "all") == pytest.approx(math.log(1 + 0.5 / 4.5))
        assert idf(stats, "unseen") == pytest.approx(math.log(1 + 4.5 / 0.5))
        assert idf(stats, "all") > 0

    def test_idf_falls_as_df_grows(self):
        stats = CollectionStats(
            doc_count=100, df={f"t{df}": df for df in range(1, 101)}, avg_len=3.0
        )
        values = [idf(stats, f"t{df}") for df in range(0, 101)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_df_outside_range_is_rejected(self):
        with pytest.raises(ValueError):
            CollectionStats(doc_count=2, df={"x": 3}, avg_len=1.0)


class TestCollection:
    def test_duplicate_passage_ids_rejected(self):
        p = Passage.build("a", None, "text")
        with pytest.raises(ValueError):
            PassageCollection(passages=[p, p])

    def test_lookup(self):
        collection = PassageCollection.from_passages([Passage.build("a#0", None, "x")])
        assert "a#0" in collection
        assert "b#0" not in collection
        assert collection.get("b#0") is None

    def test_save_and_load(self, two_docs, tmp_path):
        collection = ingest(two_docs, max_tokens=200)
        path = tmp_path / "collection.json"
        save_collection(collection, path)
        loaded = load_collection(path)
        assert loaded.passages == collection.passages
        assert loaded.stats == collection.stats
        assert loaded.get("d2#0") == collection.get("d2#0")

    def test_load_garbage(self, tmp_path):
        path = tmp_path / "collection.json"
        path.write_text("not json", encoding="utf-8")
        with pytest.raises(InputFormatError):
            load_collection(path)


@pytest.mark.parametrize(
    "passage_id, expected",
    [("doc#3", "doc"), ("a#b#12", "a#b"), ("plain", "plain"), ("tag#x", "tag#x")],
)
def test_document_id(passage_id, expected):
    assert document_id(passage_id) == expected
