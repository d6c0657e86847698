"""Record serialization, streaming ingestion and deterministic splitting."""

from __future__ import annotations

import codecs
import itertools
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Callable, Iterator, Sequence

import numpy as np

from . import kernels
from .model import DatasetRecord, Item, Relation, SceneGraph

RECORD_FIELDS = ("img_id", "name", "caption_ori", "score", "url", "items", "relations")
ITEM_FIELDS = ("item_id", "label", "attributes", "global_item_id")
RELATION_FIELDS = ("triple_id", "item1", "relation", "item2", "global_relation_id")

MAX_ERROR_LOCATIONS = 10
_CHUNK = 1 << 16


class RecordParseError(ValueError):
    """A record could not be mapped; ``code`` is a stable identifier."""

    def __init__(self, code: str, message: str, *, offset: int | None = None,
                 field: str | None = None, location: str | None = None):
        self.code = code
        self.offset = offset
        self.field = field
        self.location = location
        detail = f"{code}: {message}"
        if offset is not None:
            detail += f" (byte {offset})"
        super().__init__(detail)


class IngestIOError(OSError):
    """The byte source failed mid-stream; ``stats`` holds what was ingested."""

    def __init__(self, message: str, stats: "IngestStats"):
        super().__init__(message)
        self.stats = stats


class _RawNumber(str):
    """A JSON number kept as its source text."""


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    val_count: int
    test_count: int
    seed: int = 0

    @property
    def total(self) -> int:
        return self.train_count + self.val_count + self.test_count


@dataclass
class IngestStats:
    records_ok: int = 0
    records_failed: int = 0
    first_error_locations: list[str] = field(default_factory=list)

    @property
    def records_seen(self) -> int:
        return self.records_ok + self.records_failed

    def _fail(self, location: str):
        self.records_failed += 1
        if len(self.first_error_locations) < MAX_ERROR_LOCATIONS:
            self.first_error_locations.append(location)


# -- parsing -----------------------------------------------------------------

def _loads(text: str) -> Any:
    return json.loads(text, parse_float=_RawNumber, parse_constant=_RawNumber)


def _require(obj: dict, name: str, where: str = ""):
    if name not in obj:
        raise RecordParseError("missing-field", f"{where}{name}", field=f"{where}{name}")
    return obj[name]


def _int_field(obj: dict, name: str, where: str, optional: bool = False):
    if optional and obj.get(name) is None:
        return None
    value = _require(obj, name, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise RecordParseError("bad-field", f"{where}{name} must be an integer", field=f"{where}{name}")
    return value


def _str_field(obj: dict, name: str, where: str = "") -> str:
    value = _require(obj, name, where)
    if not isinstance(value, str) or isinstance(value, _RawNumber):
        raise RecordParseError("bad-field", f"{where}{name} must be a string", field=f"{where}{name}")
    return str(value)


def graph_from_obj(obj: dict) -> SceneGraph:
    """Map ``{"items": [...], "relations": [...]}`` onto a SceneGraph."""
    raw_items = _require(obj, "items")
    raw_rels = _require(obj, "relations")
    if not isinstance(raw_items, list):
        raise RecordParseError("bad-field", "items must be a list", field="items")
    if not isinstance(raw_rels, list):
        raise RecordParseError("bad-field", "relations must be a list", field="relations")
    items = []
    for i, it in enumerate(raw_items):
        where = f"items[{i}]."
        if not isinstance(it, dict):
            raise RecordParseError("bad-field", f"items[{i}] must be an object", field=f"items[{i}]")
        attrs = _require(it, "attributes", where)
        if not isinstance(attrs, list) or not all(isinstance(a, str) and not isinstance(a, _RawNumber) for a in attrs):
            raise RecordParseError("bad-field", f"{where}attributes must be a list of strings",
                                   field=f"{where}attributes")
        items.append(Item(
            item_id=_int_field(it, "item_id", where),
            label=_str_field(it, "label", where),
            attributes=tuple(str(a) for a in attrs),
            global_item_id=_int_field(it, "global_item_id", where, optional=True),
        ))
    relations = []
    for i, rel in enumerate(raw_rels):
        where = f"relations[{i}]."
        if not isinstance(rel, dict):
            raise RecordParseError("bad-field", f"relations[{i}] must be an object", field=f"relations[{i}]")
        relations.append(Relation(
            triple_id=_int_field(rel, "triple_id", where),
            item1=_int_field(rel, "item1", where),
            relation=_str_field(rel, "relation", where),
            item2=_int_field(rel, "item2", where),
            global_relation_id=_int_field(rel, "global_relation_id", where, optional=True),
        ))
    return SceneGraph(tuple(items), tuple(relations))


def record_from_obj(obj: Any) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise RecordParseError("malformed", "record must be a JSON object")
    for name in RECORD_FIELDS:
        _require(obj, name)
    score = obj["score"]
    if isinstance(score, bool) or not isinstance(score, (str, int)):
        raise RecordParseError("bad-field", "score must be a string or number", field="score")
    score_is_number = isinstance(score, _RawNumber) or isinstance(score, int)
    extra = tuple((k, v) for k, v in obj.items() if k not in RECORD_FIELDS)
    return DatasetRecord(
        img_id=_str_field(obj, "img_id"),
        name=_str_field(obj, "name"),
        caption_ori=_str_field(obj, "caption_ori"),
        score_text=str(score),
        url=_str_field(obj, "url"),
        graph=graph_from_obj(obj),
        score_is_number=score_is_number,
        extra=extra,
    )


def parse_record(text: str | bytes) -> DatasetRecord:
    """Parse one serialized record; raises RecordParseError."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RecordParseError("malformed", "invalid UTF-8", offset=exc.start) from None
    try:
        obj = _loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise RecordParseError("malformed", exc.msg, offset=offset) from None
    return record_from_obj(obj)


# -- serialization -----------------------------------------------------------

def _emit(value: Any) -> str:
    if isinstance(value, _RawNumber):
        return str(value)
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, (int, float)):
        return json.dumps(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{_emit(str(k))}: {_emit(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def item_to_obj(it: Item) -> dict:
    obj = {"item_id": it.item_id, "label": it.label, "attributes": list(it.attributes)}
    if it.global_item_id is not None:
        obj["global_item_id"] = it.global_item_id
    return obj


def relation_to_obj(rel: Relation) -> dict:
    obj = {"triple_id": rel.triple_id, "item1": rel.item1, "relation": rel.relation, "item2": rel.item2}
    if rel.global_relation_id is not None:
        obj["global_relation_id"] = rel.global_relation_id
    return obj


def graph_to_obj(graph: SceneGraph) -> dict:
    return {
        "items": [item_to_obj(it) for it in graph.items],
        "relations": [relation_to_obj(r) for r in graph.relations],
    }


def record_to_obj(record: DatasetRecord) -> dict:
    score = _RawNumber(record.score_text) if record.score_is_number else record.score_text
    obj = {
        "img_id": record.img_id,
        "name": record.name,
        "caption_ori": record.caption_ori,
        "score": score,
        "url": record.url,
        **graph_to_obj(record.graph),
    }
    for k, v in record.extra:
        obj[k] = v
    return obj


def _dumps(value) -> str:
    # graph parts never hold raw numbers, so the C encoder is safe there;
    # its default separators are the canonical ", " and ": "
    return json.dumps(value, ensure_ascii=False)


def serialize_record(record: DatasetRecord) -> str:
    """Canonical single-line form; equal records give identical text."""
    score = record.score_text if record.score_is_number else _dumps(record.score_text)
    parts = [
        f'"img_id": {_dumps(record.img_id)}',
        f'"name": {_dumps(record.name)}',
        f'"caption_ori": {_dumps(record.caption_ori)}',
        f'"score": {score}',
        f'"url": {_dumps(record.url)}',
        f'"items": {_dumps([item_to_obj(it) for it in record.graph.items])}',
        f'"relations": {_dumps([relation_to_obj(r) for r in record.graph.relations])}',
    ]
    parts += [f"{_dumps(k)}: {_emit(v)}" for k, v in record.extra]
    return "{" + ", ".join(parts) + "}"


def serialize_graph(graph: SceneGraph) -> str:
    return _dumps(graph_to_obj(graph))


# -- streaming ---------------------------------------------------------------

_STRING = re.compile(r'"[^"\\]*(?:\\.[^"\\]*)*"', re.DOTALL)
_STRUCT = re.compile(r'[\[\]{}",]')
_NON_WS = re.compile(r"\S")


class _ArrayElements:
    """Yield the source text of each element of one top-level JSON array,
    or of each value in a plain concatenation of JSON objects."""

    def __init__(self, stream: IO[bytes], prefix: bytes, array: bool = True):
        self._array = array
        self._stream = stream
        self._decoder = codecs.getincrementaldecoder("utf-8")("strict")
        self._buf = self._decoder.decode(prefix)
        self._eof = False

    def _more(self) -> bool:
        if self._eof:
            return False
        chunk = self._stream.read(_CHUNK)
        if not chunk:
            self._eof = True
            self._buf += self._decoder.decode(b"", final=True)
            return False
        self._buf += self._decoder.decode(chunk)
        return True

    def _skip_ws(self, pos: int) -> int:
        while True:
            m = _NON_WS.search(self._buf, pos)
            if m:
                return m.start()
            pos = len(self._buf)
            if not self._more():
                return -1

    def __iter__(self) -> Iterator[str | RecordParseError]:
        pos = self._skip_ws(0)
        if self._array:
            if pos < 0 or self._buf[pos] != "[":
                yield RecordParseError("malformed", "expected '['")
                return
            pos += 1
        while True:
            pos = self._skip_ws(pos)
            if pos < 0:
                if self._array:
                    yield RecordParseError("malformed", "unterminated array")
                return
            ch = self._buf[pos]
            if ch == "]" and self._array:
                return
            if ch == ",":
                pos += 1
                continue
            start, depth, end = pos, 0, -1
            while end < 0:
                m = _STRUCT.search(self._buf, pos)
                if m is None:
                    pos = len(self._buf)
                    if not self._more():
                        break
                    continue
                tok, pos = m.group(), m.start()
                if tok == '"':
                    s = _STRING.match(self._buf, pos)
                    if s is None or (s.end() == len(self._buf) and not self._eof):
                        if not self._more():
                            break
                        continue
                    pos = s.end()
                elif tok in "[{":
                    depth += 1
                    pos += 1
                elif tok in "]}":
                    if depth == 0:
                        end = pos if pos > start else pos + 1  # stray closer: emit it alone
                    else:
                        depth -= 1
                        pos += 1
                        if depth == 0:
                            end = pos
                else:  # ','
                    if depth == 0:
                        end = pos
                    else:
                        pos += 1
            if end < 0:
                yield RecordParseError("malformed", "input ends inside a value")
                return
            yield self._buf[start:end]
            self._buf = self._buf[end:]
            pos = 0


def _open_source(source) -> tuple[IO[bytes], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), True
    return source, False


def _iter_lines(stream: IO[bytes], head: bytes):
    if head and not head.endswith(b"\n"):
        head += stream.readline()
    first = head.split(b"\n")
    if first and not first[-1]:
        first.pop()
    for lineno, line in enumerate(itertools.chain(first, stream), 1):
        if line.strip():
            yield f"line {lineno}", line


def _iter_texts(stream: IO[bytes]):
    head = b""
    while not head.strip():
        chunk = stream.read(1024)
        if not chunk:
            break
        head += chunk
    if head.lstrip().startswith(b"["):
        for n, text in enumerate(_ArrayElements(stream, head)):
            yield f"element {n}", text
        return
    if head and b"\n" not in head:
        head += stream.readline()
    try:
        one_per_line = isinstance(json.loads(head.split(b"\n", 1)[0]), dict)
    except ValueError:
        one_per_line = False
    if one_per_line or not head.strip():
        yield from _iter_lines(stream, head)
    else:  # pretty-printed or concatenated objects
        for n, text in enumerate(_ArrayElements(stream, head, array=False)):
            yield f"record {n}", text


def iter_parsed(source) -> Iterator[tuple[str, DatasetRecord | RecordParseError]]:
    """Yield ``(location, record-or-error)`` in input order."""
    stream, owned = _open_source(source)
    try:
        for location, text in _iter_texts(stream):
            if isinstance(text, RecordParseError):
                text.location = location
                yield location, text
                continue
            try:
                yield location, parse_record(text)
            except RecordParseError as exc:
                exc.location = location
                yield location, exc
    finally:
        if owned:
            stream.close()


def stream_records(source, on_record: Callable[[DatasetRecord], Any],
                   on_error: Callable[[RecordParseError], Any] | None = None) -> IngestStats:
    """Parse records one at a time from ``.jsonl`` or a top-level JSON array.

    Memory use does not grow with the number of records. Bad records go to
    ``on_error`` (with ``location`` set) and the stream continues.
    """
    stats = IngestStats()
    try:
        for location, got in iter_parsed(source):
            if isinstance(got, RecordParseError):
                stats._fail(location)
                if on_error is not None:
                    on_error(got)
            else:
                stats.records_ok += 1
                on_record(got)
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestIOError(str(exc), stats) from exc
    return stats


def iter_records(source) -> Iterator[DatasetRecord]:
    """Like ``stream_records`` but raises on the first bad record."""
    for _, got in iter_parsed(source):
        if isinstance(got, RecordParseError):
            raise got
        yield got


def load_records(source) -> list[DatasetRecord]:
    return list(iter_records(source))


def write_records(records, path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(serialize_record(rec))
            fh.write("\n")
            n += 1
    return n


# -- splitting ---------------------------------------------------------------

def split_dataset(ids: Sequence[str], spec: SplitSpec) -> tuple[list[str], list[str], list[str]]:
    """Seeded Fisher-Yates over the sorted ids, then prefix slices."""
    n = len(ids)
    if min(spec.train_count, spec.val_count, spec.test_count) < 0:
        raise ValueError("split counts must be non-negative")
    if spec.total > n:
        raise ValueError(f"split needs {spec.total} ids but corpus has {n}")
    ordered = sorted(ids)
    if any(a == b for a, b in zip(ordered, ordered[1:])):
        raise ValueError("ids must be unique")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    if n > 1:
        draws = rng.integers(0, np.arange(n, 1, -1, dtype=np.int64), dtype=np.int64)
    else:
        draws = np.zeros(0, dtype=np.int64)
    order = np.arange(n, dtype=np.int64)
    kernels.fisher_yates(order, np.ascontiguousarray(draws))
    a, b = spec.train_count, spec.train_count + spec.val_count
    pick = order[: spec.total].tolist()
    train = [ordered[i] for i in pick[:a]]
    val = [ordered[i] for i in pick[a:b]]
    test = [ordered[i] for i in pick[b:]]
    return train, val, test


SPLIT_NAMES = ("train", "val", "test")


def write_split(out_dir, train, val, test) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, ids in zip(SPLIT_NAMES, (train, val, test)):
        p = out_dir / f"{name}.txt"
        p.write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
        paths.append(p)
    return paths


def read_id_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def check_split_lists(lists: dict[str, list[str]], corpus_ids: set[str]) -> list[str]:
    """Problems with externally supplied split lists (empty list means usable)."""
    problems = []
    seen: dict[str, str] = {}
    for name, ids in lists.items():
        for i in ids:
            if i in seen:
                problems.append(f"{i} appears in both {seen[i]} and {name}")
            else:
                seen[i] = name
            if i not in corpus_ids:
                problems.append(f"{i} in {name} is not in the corpus")
    return problems
