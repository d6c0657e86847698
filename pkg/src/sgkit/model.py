"""Scene-graph records: immutable value types, validation and derived views."""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Any, Union

STRICT = "strict"
LENIENT = "lenient"
MODES = (STRICT, LENIENT)

# LAION-Aesthetics V2 6.5+ subset
MIN_STRICT_SCORE = Decimal("6.5")

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class Item:
    item_id: int
    label: str
    attributes: tuple[str, ...] = ()
    global_item_id: int | None = None

    def __post_init__(self):
        if not isinstance(self.attributes, tuple):
            object.__setattr__(self, "attributes", tuple(self.attributes))


@dataclass(frozen=True)
class Relation:
    triple_id: int
    item1: int
    relation: str
    item2: int
    global_relation_id: int | None = None


@dataclass(frozen=True)
class SceneGraph:
    items: tuple[Item, ...] = ()
    relations: tuple[Relation, ...] = ()

    def __post_init__(self):
        if not isinstance(self.items, tuple):
            object.__setattr__(self, "items", tuple(self.items))
        if not isinstance(self.relations, tuple):
            object.__setattr__(self, "relations", tuple(self.relations))

    def item_map(self) -> dict[int, Item]:
        """First occurrence wins when ids collide (validation reports the collision)."""
        out: dict[int, Item] = {}
        for it in self.items:
            out.setdefault(it.item_id, it)
        return out


@dataclass(frozen=True)
class DatasetRecord:
    """One image's metadata, caption and scene graph.

    ``score_text`` keeps the score exactly as written so serialization is
    bit-exact; ``score`` is the parsed decimal (``None`` if unparseable).
    ``extra`` holds unknown top-level fields in their original order.
    """

    img_id: str
    name: str
    caption_ori: str
    score_text: str
    url: str
    graph: SceneGraph
    score_is_number: bool = False
    extra: tuple[tuple[str, Any], ...] = field(default=())

    @property
    def score(self) -> Decimal | None:
        try:
            value = Decimal(self.score_text.strip())
        except (InvalidOperation, AttributeError):
            return None
        return value if value.is_finite() else None


@dataclass(frozen=True, order=True)
class Issue:
    location: str
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[Issue, ...] = ()
    warnings: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def rules(self) -> set[str]:
        return {i.rule for i in self.errors} | {i.rule for i in self.warnings}

    def to_dict(self) -> dict:
        return {
            "errors": [[i.rule, i.location, i.message] for i in self.errors],
            "warnings": [[i.rule, i.location, i.message] for i in self.warnings],
        }


class DanglingReferenceError(ValueError):
    """A relation points at an item_id that does not exist."""

    def __init__(self, triple_id: int, item_id: int):
        super().__init__(f"triple {triple_id} references missing item {item_id}")
        self.triple_id = triple_id
        self.item_id = item_id


def _loc_key(issue: Issue):
    # items[10] must sort after items[2]
    m = re.match(r"^([a-z_]+)(?:\[(\d+)\])?(.*)$", issue.location)
    if m is None:
        return (issue.location, -1, "", issue.rule, issue.message)
    section, idx, rest = m.groups()
    order = {"record": 0, "items": 1, "relations": 2}.get(section, 3)
    return (order, section, int(idx) if idx is not None else -1, rest, issue.rule, issue.message)


def _is_id(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 0


def _blank(s) -> bool:
    return not isinstance(s, str) or not s.strip()


def _graph_issues(graph: SceneGraph, mode: str, errors: list, warnings: list):
    strict = mode == STRICT
    seen_items: set[int] = set()
    for i, it in enumerate(graph.items):
        loc = f"items[{i}]"
        if not _is_id(it.item_id):
            errors.append(Issue(loc, "bad-item-id", f"item_id {it.item_id!r} is not a non-negative integer"))
        elif it.item_id in seen_items:
            errors.append(Issue(loc, "dup-item-id", f"item_id {it.item_id} already used"))
        else:
            seen_items.add(it.item_id)
        if _blank(it.label):
            errors.append(Issue(loc, "empty-label", "label is empty"))
        if it.global_item_id is not None and not _is_id(it.global_item_id):
            errors.append(Issue(loc, "bad-global-id", f"global_item_id {it.global_item_id!r} is invalid"))
        if not it.attributes:
            issue = Issue(loc, "no-attribute", f"item {it.item_id} has no attribute")
            (errors if strict else warnings).append(issue)
        for j, attr in enumerate(it.attributes):
            if _blank(attr):
                errors.append(Issue(f"{loc}.attributes[{j}]", "empty-attribute", "attribute is empty"))
        norm = [normalize_text(a) for a in it.attributes if not _blank(a)]
        for attr, n in sorted(Counter(norm).items()):
            if n > 1:
                warnings.append(Issue(loc, "dup-attribute", f"attribute {attr!r} repeated {n} times"))

    seen_triples: set[int] = set()
    seen_keys: set[tuple] = set()
    for i, rel in enumerate(graph.relations):
        loc = f"relations[{i}]"
        if not _is_id(rel.triple_id):
            errors.append(Issue(loc, "bad-triple-id", f"triple_id {rel.triple_id!r} is not a non-negative integer"))
        elif rel.triple_id in seen_triples:
            errors.append(Issue(loc, "dup-triple-id", f"triple_id {rel.triple_id} already used"))
        else:
            seen_triples.add(rel.triple_id)
        for end in ("item1", "item2"):
            ref = getattr(rel, end)
            if not _is_id(ref) or ref not in seen_items:
                errors.append(Issue(loc, "dangling-ref", f"{end}={ref!r} does not name an item"))
        if _blank(rel.relation):
            errors.append(Issue(loc, "empty-relation", "relation phrase is empty"))
        if rel.global_relation_id is not None and not _is_id(rel.global_relation_id):
            errors.append(Issue(loc, "bad-global-id", f"global_relation_id {rel.global_relation_id!r} is invalid"))
        if rel.item1 == rel.item2:
            warnings.append(Issue(loc, "self-relation", f"item {rel.item1} relates to itself"))
        key = (rel.item1, normalize_text(rel.relation) if isinstance(rel.relation, str) else rel.relation, rel.item2)
        if key in seen_keys:
            warnings.append(Issue(loc, "dup-triple", f"triple {key} repeated"))
        seen_keys.add(key)


def validate(obj: Union[DatasetRecord, SceneGraph], mode: str = LENIENT) -> ValidationReport:
    """Check every invariant; never raises on malformed content."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    errors: list[Issue] = []
    warnings: list[Issue] = []
    if isinstance(obj, DatasetRecord):
        if _blank(obj.img_id):
            errors.append(Issue("record", "empty-img-id", "img_id is empty"))
        score = obj.score
        if score is None:
            errors.append(Issue("record", "bad-score", f"score {obj.score_text!r} is not a finite decimal"))
        elif score <= MIN_STRICT_SCORE:
            issue = Issue("record", "low-score", f"score {obj.score_text} is not above {MIN_STRICT_SCORE}")
            (errors if mode == STRICT else warnings).append(issue)
        graph = obj.graph
    else:
        graph = obj
    _graph_issues(graph, mode, errors, warnings)
    return ValidationReport(tuple(sorted(errors, key=_loc_key)), tuple(sorted(warnings, key=_loc_key)))


def triples(graph: SceneGraph) -> list[tuple[Item, str, Item]]:
    items = graph.item_map()
    out = []
    for rel in sorted(graph.relations, key=lambda r: r.triple_id):
        for ref in (rel.item1, rel.item2):
            if ref not in items:
                raise DanglingReferenceError(rel.triple_id, ref)
        out.append((items[rel.item1], rel.relation, items[rel.item2]))
    return out


def single_objects(graph: SceneGraph) -> list[Item]:
    linked = {r.item1 for r in graph.relations} | {r.item2 for r in graph.relations}
    return sorted((it for it in graph.items if it.item_id not in linked), key=lambda it: it.item_id)


def annotation_length(graph: SceneGraph) -> int:
    """Nodes (objects + attribute strings) plus edges (relation records)."""
    return len(graph.items) + sum(len(it.attributes) for it in graph.items) + len(graph.relations)


def normalize_text(text: str) -> str:
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip().lower()


def canonicalize(graph: SceneGraph) -> SceneGraph:
    items = tuple(
        replace(it, label=normalize_text(it.label), attributes=tuple(normalize_text(a) for a in it.attributes))
        for it in graph.items
    )
    relations = tuple(replace(r, relation=normalize_text(r.relation)) for r in graph.relations)
    return SceneGraph(items, relations)

