import io
import json
import random
import tracemalloc

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgkit.io import (IngestIOError, RecordParseError, SplitSpec, check_split_lists, iter_records,
                      load_records, parse_record, serialize_record, split_dataset, stream_records,
                      write_split, read_id_list)
from sgkit.synth import random_record, synthetic_corpus


def test_parse_published_example_record(rec_482063):
    r = rec_482063
    assert r.img_id == "482063"
    person = r.graph.items[0]
    assert person.label == "person" and person.attributes == ("young", "female")
    assert person.global_item_id == 3201686
    assert r.score_text == "6.720815181732178"
    assert str(r.score) == "6.720815181732178"


def test_missing_field():
    obj = json.loads(serialize_record(synthetic_corpus(1)[0]))
    del obj["items"]
    with pytest.raises(RecordParseError) as exc:
        parse_record(json.dumps(obj))
    assert str(exc.value).startswith("missing-field: items")
    assert exc.value.field == "items"


def test_malformed_reports_byte_offset():
    text = '{"img_id": "é", oops}'
    with pytest.raises(RecordParseError) as exc:
        parse_record(text)
    assert exc.value.code == "malformed"
    assert exc.value.offset == text.encode().index(b"oops")


def test_bad_field_types():
    obj = json.loads(serialize_record(synthetic_corpus(1)[0]))
    obj["items"][0]["item_id"] = "0"
    with pytest.raises(RecordParseError, match="bad-field"):
        parse_record(json.dumps(obj))


def test_roundtrip_fixpoint(fixtures_dir):
    for name in ("example_482063.json", "example_483868.json"):
        r = parse_record((fixtures_dir / name).read_text())
        canon = serialize_record(r)
        assert parse_record(canon) == r
        assert serialize_record(parse_record(canon)) == canon


def test_canonical_field_order(rec_483868):
    keys = list(json.loads(serialize_record(rec_483868)))
    assert keys == ["img_id", "name", "caption_ori", "score", "url", "items", "relations"]


def test_numeric_score_and_unknown_fields_survive():
    text = ('{"url": "u", "img_id": "9", "name": "n", "caption_ori": "c", "score": 6.720815181732178000, '
            '"extra_b": [1.50, {"k": null}], "items": [], "relations": [], "extra_a": true}')
    r = parse_record(text)
    out = serialize_record(r)
    assert '"score": 6.720815181732178000' in out
    assert out.endswith('"extra_b": [1.50, {"k": null}], "extra_a": true}')
    assert parse_record(out) == r


def test_structurally_equal_records_serialize_identically():
    a, b = synthetic_corpus(1, seed=4), synthetic_corpus(1, seed=4)
    assert a[0] is not b[0]
    assert serialize_record(a[0]) == serialize_record(b[0])


_key = st.text(st.characters(min_codepoint=97, max_codepoint=122), min_size=1, max_size=6).map(lambda s: "x_" + s)
_json = st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.text(max_size=10),
    lambda kids: st.lists(kids, max_size=3) | st.dictionaries(st.text(max_size=5), kids, max_size=3),
    max_leaves=8,
)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 10**9), extras=st.dictionaries(_key, _json, max_size=3))
def test_fuzzed_roundtrip(seed, extras):
    rec = random_record(random.Random(seed), "id")
    obj = json.loads(serialize_record(rec))
    obj.update(extras)
    r = parse_record(json.dumps(obj, ensure_ascii=False))
    text = serialize_record(r)
    assert parse_record(text) == r
    assert list(json.loads(text))[7:] == list(extras)


def _jsonl(records):
    return "".join(serialize_record(r) + "\n" for r in records).encode()


def test_stream_counts_and_order():
    recs = synthetic_corpus(3)
    got = []
    stats = stream_records(io.BytesIO(_jsonl(recs)), got.append)
    assert stats.records_ok == 3 and stats.records_failed == 0
    assert got == recs


def test_stream_continues_after_bad_record():
    recs = synthetic_corpus(2)
    data = serialize_record(recs[0]) + "\n{broken\n\n" + serialize_record(recs[1]) + "\n"
    got, errs = [], []
    stats = stream_records(io.BytesIO(data.encode()), got.append, errs.append)
    assert (stats.records_ok, stats.records_failed) == (2, 1)
    assert got == recs
    assert errs[0].location == "line 2"
    assert stats.first_error_locations == ["line 2"]


def test_stream_array_and_pretty_inputs(fixtures_dir):
    recs = synthetic_corpus(4, seed=2)
    arr = "[\n" + ",\n".join(json.dumps(json.loads(serialize_record(r)), indent=2) for r in recs) + "\n]"
    assert load_records(io.BytesIO(arr.encode())) == recs
    assert load_records(fixtures_dir / "example_482063.json")[0].img_id == "482063"
    both = (fixtures_dir / "example_482063.json").read_bytes() + (fixtures_dir / "example_483868.json").read_bytes()
    assert [r.img_id for r in load_records(io.BytesIO(both))] == ["482063", "483868"]


def test_stream_array_with_tiny_chunks(monkeypatch):
    import sgkit.io as sio

    monkeypatch.setattr(sio, "_CHUNK", 7)
    recs = synthetic_corpus(5, seed=9)
    arr = "[" + ", ".join(serialize_record(r) for r in recs) + "]"
    assert load_records(io.BytesIO(arr.encode())) == recs


def test_stream_io_failure_keeps_partial_stats():
    recs = synthetic_corpus(2)

    class Flaky(io.BytesIO):
        calls = 0

        def readline(self, *a):
            Flaky.calls += 1
            if Flaky.calls > 1:
                raise OSError("disk gone")
            return super().readline(*a)

        def __iter__(self):
            return self

        def __next__(self):
            line = self.readline()
            if not line:
                raise StopIteration
            return line

    with pytest.raises(IngestIOError) as exc:
        stream_records(Flaky(_jsonl(recs) * 3), lambda r: None)
    assert exc.value.stats.records_ok >= 1


def test_iter_records_raises_on_bad():
    with pytest.raises(RecordParseError):
        list(iter_records(io.BytesIO(b"{nope}\n")))


def _peak_bytes(n, path):
    rng = random.Random(0)
    template = random_record(rng, "X")
    line = serialize_record(template)
    with open(path, "w") as fh:
        for i in range(n):
            fh.write(line.replace('"img_id": "X"', f'"img_id": "{i}"', 1) + "\n")
    count = 0

    def sink(_):
        nonlocal count
        count += 1

    tracemalloc.start()
    stream_records(path, sink)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == n
    return peak


@pytest.mark.slow
def test_stream_memory_does_not_grow(tmp_path):
    small = _peak_bytes(1_000, tmp_path / "a.jsonl")
    large = _peak_bytes(100_000, tmp_path / "b.jsonl")
    assert large < 2 * small + 256 * 1024


def test_split_sizes_and_determinism():
    ids = [str(i) for i in range(1000)]
    spec = SplitSpec(700, 100, 150, seed=11)
    a = split_dataset(ids, spec)
    assert [len(x) for x in a] == [700, 100, 150]
    assert not (set(a[0]) & set(a[1]) or set(a[0]) & set(a[2]) or set(a[1]) & set(a[2]))
    assert split_dataset(list(reversed(ids)), spec) == a
    assert split_dataset(ids, SplitSpec(700, 100, 150, seed=12)) != a


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset(["a", "b"], SplitSpec(2, 1, 0))
    with pytest.raises(ValueError):
        split_dataset(["a", "a"], SplitSpec(1, 0, 0))


def test_split_seeds_give_different_permutations():
    ids = [str(i) for i in range(200)]
    seen = {tuple(split_dataset(ids, SplitSpec(150, 20, 30, seed=s))[0]) for s in range(100)}
    assert len(seen) == 100
    # every id should land in train for some seed and out of it for another
    counts = {i: 0 for i in ids}
    for s in range(100):
        for i in split_dataset(ids, SplitSpec(150, 20, 30, seed=s))[0]:
            counts[i] += 1
    assert 0 < min(counts.values()) and max(counts.values()) < 100
    mean = sum(counts.values()) / len(counts)
    assert abs(mean - 75.0) < 1e-9


def test_split_files_and_external_lists(tmp_path):
    paths = write_split(tmp_path, ["a", "b"], ["c"], [])
    assert [p.name for p in paths] == ["train.txt", "val.txt", "test.txt"]
    assert read_id_list(paths[0]) == ["a", "b"]
    assert check_split_lists({"train": ["a"], "val": ["a", "z"]}, {"a", "b"}) == [
        "a appears in both train and val", "z in val is not in the corpus"]
