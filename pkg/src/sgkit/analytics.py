"""Corpus statistics: object counts, annotation lengths, word histograms, top terms.

Everything accumulates into integer counters (count, sum, sum of squares), so
shards can be merged in any order and produce identical reports.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .model import DatasetRecord, annotation_length, normalize_text

OBJECT_WORD_BINS = (0, 5, 10, 20)
SG_WORD_BINS = (0, 10, 20, 30)

_TOKEN = re.compile(r"\w+", re.UNICODE)
_SENTENCE_END = re.compile(r"[.!?]+$")

# lowercase words never counted as proper nouns even when capitalized
COMMON_WORDS = frozenset("""
a an the and or but nor of in on at to for from by with without into onto over under above below
near beside between behind about across after before during through up down out off is are was
were be been being this that these those it its his her their our your my i you he she we they
me him them us not no yes all any some each every both few many more most other such only own same
so than too very can will just new old best top free how what when where which who why page photo
image picture stock vector illustration print poster art wallpaper background design set collection
""".split())

# crude closed-class list used by the default caption noun extractor
_FUNCTION_WORDS = COMMON_WORDS | frozenset("""
is am do does did has have had having get gets got make makes made go goes went one two three four
five six seven eight nine ten first second also there here then now if as like per via vs etc
""".split())


def whitespace_punct_tokenize(text: str) -> list[str]:
    """Split on Unicode whitespace and punctuation."""
    return _TOKEN.findall(text)


class StatsError(ValueError):
    pass


def _is_capitalized(word: str) -> bool:
    return bool(word) and word[0].isupper()


def classify_proper_noun(word: str, context: Sequence[str] | None = None, index: int | None = None,
                         allowlist: frozenset[str] = COMMON_WORDS) -> bool:
    """Heuristic proper-noun test for one token of a caption.

    A capitalized token is proper unless its lowercase form is allowlisted or
    it opens a sentence. A sentence-opening token still counts when the next
    token is capitalized too (multi-word names such as "Yosemite National").
    """
    if not _is_capitalized(word) or word.lower() in allowlist:
        return False
    if word.isupper() and len(word) > 1:
        return True
    if context is None or index is None:
        return True
    at_start = index == 0 or bool(_SENTENCE_END.search(context[index - 1]))
    if not at_start:
        return True
    j = index + 1
    if j < len(context) and context[j] == "s":  # possessive: "Yosemite's Rainbow"
        j += 1
    nxt = context[j] if j < len(context) else ""
    return _is_capitalized(nxt) and nxt.lower() not in allowlist


def caption_tokens_with_punct(text: str) -> list[str]:
    return re.findall(r"\w+|[.!?]+", text)


def default_noun_extractor(caption: str) -> list[tuple[str, bool]]:
    """Content words of a caption, each flagged as proper or not.

    No part-of-speech model is bundled, so every alphabetic token of two or
    more letters outside the closed-class list is taken as a noun candidate.
    """
    toks = caption_tokens_with_punct(caption)
    out = []
    for i, tok in enumerate(toks):
        if not tok.isalpha() or len(tok) < 2 or tok.lower() in _FUNCTION_WORDS:
            continue
        out.append((tok, classify_proper_noun(tok, toks, i)))
    return out


def _word_count(text: str) -> int:
    return len(text.split())


def object_word_counts(record: DatasetRecord) -> list[int]:
    """Label words plus attribute words, per object."""
    return [_word_count(it.label) + sum(_word_count(a) for a in it.attributes) for it in record.graph.items]


def sg_word_count(record: DatasetRecord) -> int:
    return sum(object_word_counts(record)) + sum(_word_count(r.relation) for r in record.graph.relations)


def _bin_index(value: float, edges: Sequence[float]) -> int:
    # edges are left-closed lower bounds; last bin is open-ended
    idx = 0
    for k, lo in enumerate(edges):
        if value >= lo:
            idx = k
    return idx


def bin_labels(edges: Sequence[float]) -> list[str]:
    labels = [f"[{edges[k]}-{edges[k + 1]})" for k in range(len(edges) - 1)]
    labels.append(f"[{edges[-1]},inf)")
    return labels


@dataclass
class Moments:
    """Exact integer running count / sum / sum of squares."""

    n: int = 0
    total: int = 0
    total_sq: int = 0

    def add(self, x: int):
        self.n += 1
        self.total += x
        self.total_sq += x * x

    def merge(self, other: "Moments"):
        self.n += other.n
        self.total += other.total
        self.total_sq += other.total_sq

    def mean_std(self) -> tuple[float, float]:
        """Mean and population standard deviation."""
        if self.n == 0:
            raise StatsError("no observations")
        var_num = self.n * self.total_sq - self.total * self.total  # exact integer
        return self.total / self.n, math.sqrt(var_num) / self.n


def mean_std(values: Iterable[int]) -> tuple[float, float]:
    m = Moments()
    for v in values:
        m.add(int(v))
    return m.mean_std()


@dataclass
class StatsReport:
    n_records: int
    objects_mean_std: tuple[float, float]
    objects_noproper_mean_std: tuple[float, float]
    sg_length_mean_std: tuple[float, float]
    caption_length_mean_std: tuple[float, float]
    caption_objects_mean_std: tuple[float, float]
    caption_objects_noproper_mean_std: tuple[float, float]
    object_word_hist: dict[str, float]
    sg_word_hist: dict[str, float]
    top_relations: list[tuple[str, int, float]]
    top_attributes: list[tuple[str, int, float]]

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "objects_mean_std": list(self.objects_mean_std),
            "objects_noproper_mean_std": list(self.objects_noproper_mean_std),
            "sg_length_mean_std": list(self.sg_length_mean_std),
            "caption_length_mean_std": list(self.caption_length_mean_std),
            "caption_objects_mean_std": list(self.caption_objects_mean_std),
            "caption_objects_noproper_mean_std": list(self.caption_objects_noproper_mean_std),
            "object_word_hist": self.object_word_hist,
            "sg_word_hist": self.sg_word_hist,
            "top_relations": [list(t) for t in self.top_relations],
            "top_attributes": [list(t) for t in self.top_attributes],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    def format_table(self) -> str:
        def ms(pair):
            return f"{pair[0]:.2f} ± {pair[1]:.2f}"

        rows = [
            ("records", str(self.n_records)),
            ("# objects (SG)", ms(self.objects_mean_std)),
            ("# objects w/o proper noun (SG)", ms(self.objects_noproper_mean_std)),
            ("# objects (caption)", ms(self.caption_objects_mean_std)),
            ("# objects w/o proper noun (caption)", ms(self.caption_objects_noproper_mean_std)),
            ("annotation length (SG)", ms(self.sg_length_mean_std)),
            ("annotation length (caption)", ms(self.caption_length_mean_std)),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{k:<{width}}  {v}" for k, v in rows]
        lines.append("")
        lines.append("words per object")
        lines += [f"  {k:<10} {v:6.2f}%" for k, v in self.object_word_hist.items()]
        lines.append("words per scene graph")
        lines += [f"  {k:<10} {v:6.2f}%" for k, v in self.sg_word_hist.items()]
        for title, rows_ in (("top relations", self.top_relations), ("top attributes", self.top_attributes)):
            lines.append(title)
            lines += [f"  {term:<24} {count:>9} {pct:6.2f}%" for term, count, pct in rows_]
        return "\n".join(lines)


@dataclass
class StatsAccumulator:
    """Mergeable single pass over records."""

    tokenizer: Callable[[str], list] = whitespace_punct_tokenize
    noun_extractor: Callable[[str], list] = default_noun_extractor
    object_bins: tuple = OBJECT_WORD_BINS
    sg_bins: tuple = SG_WORD_BINS
    objects: Moments = field(default_factory=Moments)
    sg_length: Moments = field(default_factory=Moments)
    caption_length: Moments = field(default_factory=Moments)
    caption_objects: Moments = field(default_factory=Moments)
    caption_objects_noproper: Moments = field(default_factory=Moments)
    object_hist: list = None
    sg_hist: list = None
    relations: Counter = field(default_factory=Counter)
    attributes: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.object_hist = [0] * len(self.object_bins)
        self.sg_hist = [0] * len(self.sg_bins)

    def add(self, record: DatasetRecord):
        g = record.graph
        # SG labels are common nouns by construction; both object counts coincide
        self.objects.add(len(g.items))
        self.sg_length.add(annotation_length(g))
        self.caption_length.add(len(self.tokenizer(record.caption_ori)))
        nouns = self.noun_extractor(record.caption_ori)
        self.caption_objects.add(len(nouns))
        self.caption_objects_noproper.add(sum(1 for _, proper in nouns if not proper))
        for wc in object_word_counts(record):
            self.object_hist[_bin_index(wc, self.object_bins)] += 1
        self.sg_hist[_bin_index(sg_word_count(record), self.sg_bins)] += 1
        self.relations.update(normalize_text(r.relation) for r in g.relations)
        for it in g.items:
            self.attributes.update(normalize_text(a) for a in it.attributes)

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if other.object_bins != self.object_bins or other.sg_bins != self.sg_bins:
            raise StatsError("cannot merge accumulators with different bins")
        for name in ("objects", "sg_length", "caption_length", "caption_objects", "caption_objects_noproper"):
            getattr(self, name).merge(getattr(other, name))
        self.object_hist = [a + b for a, b in zip(self.object_hist, other.object_hist)]
        self.sg_hist = [a + b for a, b in zip(self.sg_hist, other.sg_hist)]
        self.relations.update(other.relations)
        self.attributes.update(other.attributes)
        return self

    def report(self, k: int = 10) -> StatsReport:
        if self.objects.n == 0:
            raise StatsError("empty corpus")
        obj = self.objects.mean_std()
        return StatsReport(
            n_records=self.objects.n,
            objects_mean_std=obj,
            objects_noproper_mean_std=obj,
            sg_length_mean_std=self.sg_length.mean_std(),
            caption_length_mean_std=self.caption_length.mean_std(),
            caption_objects_mean_std=self.caption_objects.mean_std(),
            caption_objects_noproper_mean_std=self.caption_objects_noproper.mean_std(),
            object_word_hist=_percentages(self.object_hist, self.object_bins),
            sg_word_hist=_percentages(self.sg_hist, self.sg_bins),
            top_relations=_top(self.relations, k),
            top_attributes=_top(self.attributes, k),
        )


def _percentages(counts: Sequence[int], edges: Sequence[float]) -> dict[str, float]:
    total = sum(counts)
    return {lab: (100.0 * c / total if total else 0.0) for lab, c in zip(bin_labels(edges), counts)}


def _top(counter: Counter, k: int) -> list[tuple[str, int, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    total = sum(counter.values())
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [(term, n, 100.0 * n / total) for term, n in ranked]


def compute_stats(records: Iterable[DatasetRecord], k: int = 10, **options) -> StatsReport:
    acc = StatsAccumulator(**options)
    for rec in records:
        acc.add(rec)
    return acc.report(k)


def object_count_stats(records: Iterable[DatasetRecord],
                       noun_extractor: Callable[[str], list] = default_noun_extractor) -> dict:
    """Mean/std of objects per record, for scene graphs and for captions."""
    sg, cap, cap_np = Moments(), Moments(), Moments()
    for rec in records:
        sg.add(len(rec.graph.items))
        nouns = noun_extractor(rec.caption_ori)
        cap.add(len(nouns))
        cap_np.add(sum(1 for _, proper in nouns if not proper))
    if sg.n == 0:
        raise StatsError("empty corpus")
    return {
        "sg": sg.mean_std(),
        "sg_noproper": sg.mean_std(),
        "caption": cap.mean_std(),
        "caption_noproper": cap_np.mean_std(),
    }


def length_stats(records: Iterable[DatasetRecord],
                 tokenizer: Callable[[str], list] = whitespace_punct_tokenize) -> dict:
    sg, cap = Moments(), Moments()
    for rec in records:
        sg.add(annotation_length(rec.graph))
        cap.add(len(tokenizer(rec.caption_ori)))
    if sg.n == 0:
        raise StatsError("empty corpus")
    return {"sg_length": sg.mean_std(), "caption_length": cap.mean_std()}


def word_histograms(records: Iterable[DatasetRecord], object_bins: Sequence[float] = OBJECT_WORD_BINS,
                    sg_bins: Sequence[float] = SG_WORD_BINS) -> tuple[dict[str, float], dict[str, float]]:
    obj_counts = [0] * len(object_bins)
    sg_counts = [0] * len(sg_bins)
    for rec in records:
        for wc in object_word_counts(rec):
            obj_counts[_bin_index(wc, object_bins)] += 1
        sg_counts[_bin_index(sg_word_count(rec), sg_bins)] += 1
    return _percentages(obj_counts, object_bins), _percentages(sg_counts, sg_bins)


def top_k_terms(records: Iterable[DatasetRecord], kind: str, k: int) -> list[tuple[str, int, float]]:
    if kind not in ("relation", "attribute"):
        raise ValueError("kind must be 'relation' or 'attribute'")
    counter: Counter = Counter()
    for rec in records:
        if kind == "relation":
            counter.update(normalize_text(r.relation) for r in rec.graph.relations)
        else:
            for it in rec.graph.items:
                counter.update(normalize_text(a) for a in it.attributes)
    return _top(counter, k)


def parse_bins(text: str) -> tuple[int, ...]:
    """``"0,5,10,20"`` -> ``(0, 5, 10, 20)``; edges must be strictly increasing."""
    edges = tuple(int(x) for x in text.split(",") if x.strip())
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bad bin edges {text!r}")
    return edges
