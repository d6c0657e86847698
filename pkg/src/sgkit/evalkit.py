"""Scene-graph consistency metrics and CompSGen benchmark selection.

The three metrics are multiset intersection-over-union scores between lists
derived from two scene graphs: subject-relation-object triples, entity labels,
and relation phrases. Attributes take no part in any of them.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .annotator import PromptConfig, build_extraction_prompt, parse_llm_response
from .clients import ChatClient, ImageGenerator
from .io import serialize_graph
from .model import DatasetRecord, SceneGraph, normalize_text, triples

log = logging.getLogger(__name__)


class TripleKey(NamedTuple):
    subject_label: str
    relation_phrase: str
    object_label: str


@dataclass(frozen=True)
class IoUReport:
    sg_iou: float
    entity_iou: float
    relation_iou: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.sg_iou, self.entity_iou, self.relation_iou)


def entity_list(graph: SceneGraph) -> Counter:
    return Counter(normalize_text(it.label) for it in graph.items)


def relation_list(graph: SceneGraph) -> Counter:
    return Counter(normalize_text(r.relation) for r in graph.relations)


def sg_list(graph: SceneGraph) -> Counter:
    return Counter(
        TripleKey(normalize_text(s.label), normalize_text(r), normalize_text(o.label))
        for s, r, o in triples(graph)
    )


def iou(a: Mapping, b: Mapping) -> float:
    """Multiset IoU: sum of per-element minimum counts over sum of maxima."""
    keys = set(a) | set(b)
    inter = sum(min(a.get(k, 0), b.get(k, 0)) for k in keys)
    union = sum(max(a.get(k, 0), b.get(k, 0)) for k in keys)
    if union == 0:
        return 1.0
    return inter / union


def iou_report(predicted: SceneGraph, reference: SceneGraph) -> IoUReport:
    return IoUReport(
        sg_iou=iou(sg_list(predicted), sg_list(reference)),
        entity_iou=iou(entity_list(predicted), entity_list(reference)),
        relation_iou=iou(relation_list(predicted), relation_list(reference)),
    )


def mean_report(reports: Sequence[IoUReport]) -> IoUReport:
    if not reports:
        raise ValueError("no reports to average")
    n = len(reports)
    return IoUReport(*(sum(col) / n for col in zip(*(r.as_tuple() for r in reports))))


# -- LLM-based extraction ----------------------------------------------------

def extract_sg_from_image(image_ref: str | bytes, llm_client: ChatClient,
                          config: PromptConfig = PromptConfig()) -> SceneGraph:
    reply = llm_client.complete(build_extraction_prompt(config), image_ref)
    return parse_llm_response(reply)


def generation_prompt(record: DatasetRecord, variant: str) -> str:
    if variant == "caption":
        return record.caption_ori
    if variant == "sg":
        return serialize_graph(record.graph)
    raise ValueError(f"variant must be 'caption' or 'sg', got {variant!r}")


def annotation_accuracy_protocol(record: DatasetRecord, image_generator: ImageGenerator,
                                 extractor: ChatClient, variant: str,
                                 gt_image: str | bytes | None = None) -> IoUReport:
    """Generate an image from the annotation and compare what an extractor
    reads off it with what it reads off the real image."""
    generated = image_generator.generate(generation_prompt(record, variant))
    pred = extract_sg_from_image(generated, extractor)
    ref = extract_sg_from_image(gt_image if gt_image is not None else record.url, extractor)
    return iou_report(pred, ref)


@dataclass
class BatchResult:
    rows: list[tuple[str, IoUReport]]
    failures: list[tuple[str, str]]

    @property
    def n_success(self) -> int:
        return len(self.rows)

    def mean(self) -> IoUReport:
        return mean_report([r for _, r in self.rows])


def accuracy_batch(records: Sequence[DatasetRecord], image_generator: ImageGenerator, extractor: ChatClient,
                   variant: str, parallelism: int = 4) -> BatchResult:
    """Run the accuracy protocol over many records; failures are logged and skipped."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def one(rec):
        try:
            return rec.img_id, annotation_accuracy_protocol(rec, image_generator, extractor, variant), None
        except Exception as exc:
            log.warning("accuracy protocol failed for %s: %s", rec.img_id, exc)
            return rec.img_id, None, f"{type(exc).__name__}: {exc}"

    rows, failures = [], []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        for img_id, report, err in pool.map(one, records):
            if report is None:
                failures.append((img_id, err))
            else:
                rows.append((img_id, report))
    return BatchResult(rows, failures)


def format_iou_table(rows: Iterable[tuple[str, IoUReport]], aggregate: IoUReport | None = None,
                     count: int | None = None) -> str:
    lines = ["img_id\tsg_iou\tentity_iou\trelation_iou"]
    for img_id, r in rows:
        lines.append(f"{img_id}\t{r.sg_iou:.6f}\t{r.entity_iou:.6f}\t{r.relation_iou:.6f}")
    if aggregate is not None:
        label = "MEAN" if count is None else f"MEAN(n={count})"
        lines.append(f"{label}\t{aggregate.sg_iou:.6f}\t{aggregate.entity_iou:.6f}\t{aggregate.relation_iou:.6f}")
    return "\n".join(lines) + "\n"


# -- benchmark selection -----------------------------------------------------

@dataclass(frozen=True)
class BenchManifest:
    img_ids: tuple[str, ...]
    threshold: int
    source_split: str
    n_scanned: int = 0

    def render(self) -> str:
        head = [
            f"# threshold: relations > {self.threshold}",
            f"# source_split: {self.source_split}",
            f"# scanned: {self.n_scanned}",
            f"# selected: {len(self.img_ids)}",
        ]
        return "\n".join(head + list(self.img_ids)) + "\n"

    def write(self, path) -> Path:
        p = Path(path)
        p.write_text(self.render(), encoding="utf-8")
        return p


def select_complex(records: Iterable[DatasetRecord], threshold: int = 4, source_split: str = "test") -> BenchManifest:
    """Records with strictly more than ``threshold`` relations, in input order."""
    chosen, n = [], 0
    for rec in records:
        n += 1
        if len(rec.graph.relations) > threshold:
            chosen.append(rec.img_id)
    return BenchManifest(tuple(chosen), threshold, source_split, n)


def match_records(pred: Iterable[DatasetRecord], ref: Iterable[DatasetRecord]) -> tuple[list, list[str]]:
    """Pair records by img_id in reference order; returns pairs and ids missing a prediction."""
    by_id: dict[str, DatasetRecord] = {}
    for r in pred:
        by_id.setdefault(r.img_id, r)
    pairs, missing = [], []
    for r in ref:
        p = by_id.get(r.img_id)
        if p is None:
            missing.append(r.img_id)
        else:
            pairs.append((p, r))
    return pairs, missing


def corpus_iou(pairs: Sequence[tuple[DatasetRecord, DatasetRecord]],
               scorer: Callable[[SceneGraph, SceneGraph], IoUReport] = iou_report) -> BatchResult:
    return BatchResult([(r.img_id, scorer(p.graph, r.graph)) for p, r in pairs], [])
