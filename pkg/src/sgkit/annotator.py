"""Automated scene-graph annotation through a multimodal chat endpoint.

The pipeline is resumable: every finished job is appended to a tab-separated
journal, and a re-run skips whatever the journal (or the output file) already
records as done.
"""

from __future__ import annotations

import csv
import json
import logging
import random
import re
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .clients import ChatClient
from .io import (IngestStats, RecordParseError, _RawNumber, graph_from_obj,
                 graph_to_obj, serialize_record)
from .model import LENIENT, DatasetRecord, SceneGraph, ValidationReport, triples, validate

log = logging.getLogger(__name__)

COVERAGE_INSTRUCTION = (
    "Identify as many objects, attributes, and their relations within the image as possible."
)

DEFAULT_RULES = (
    "Identify the objects in the image and assign a unique ID to each.",
    "The attributes must be abstract adjectives and should not include specific objects. "
    "Each object may have one or more attributes.",
    "The relations between objects should be as specific as possible, avoiding simple relations. "
    "Use more precise verbs, minimizing repetition.",
    'For people, label the object as "person" and include attributes such as gender and age. '
    "Avoid anthropomorphism or associations, and provide an objective description of what is "
    "observed in the image.",
)

OUTPUT_FORMAT = (
    "Return only a JSON object of the form "
    '{"items": [{"item_id": <int>, "label": <noun>, "attributes": [<adjective>, ...]}, ...], '
    '"relations": [{"triple_id": <int>, "item1": <item_id>, "relation": <verb phrase>, '
    '"item2": <item_id>}, ...]}. '
    "Every item needs at least one attribute; item1 and item2 must be item_id values listed in items."
)

JOURNAL_STATUSES = ("done", "failed")


@dataclass(frozen=True)
class PromptConfig:
    rule_texts: tuple[str, ...] = DEFAULT_RULES
    output_format_instructions: str = OUTPUT_FORMAT
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    include_caption: bool = False

    def __post_init__(self):
        if not self.rule_texts:
            raise ValueError("rule_texts must not be empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def with_rules(self, *extra: str) -> "PromptConfig":
        return PromptConfig(tuple(self.rule_texts) + extra, self.output_format_instructions,
                            self.model_name, self.temperature, self.include_caption)


def build_prompt(config: PromptConfig, caption: str | None = None) -> str:
    lines = ["Annotate the image with a scene graph.", COVERAGE_INSTRUCTION, "Rules:"]
    lines += [f"{n}) {rule}" for n, rule in enumerate(config.rule_texts, 1)]
    if config.include_caption and caption:
        lines.append(f"The original caption of the image is: {caption}")
    lines.append(config.output_format_instructions)
    return "\n".join(lines)


def build_extraction_prompt(config: PromptConfig = PromptConfig()) -> str:
    """Same schema as annotation, framed as reading a scene graph off an image."""
    lines = ["Extract the scene graph of this image: list the objects you can see, their "
             "attributes, and the relations between them as subject-relation-object triples.",
             COVERAGE_INSTRUCTION, "Rules:"]
    lines += [f"{n}) {rule}" for n, rule in enumerate(config.rule_texts, 1)]
    lines.append(config.output_format_instructions)
    return "\n".join(lines)


class AnnotationError(ValueError):
    """``code`` is ``unparsable-response`` or ``invalid-graph``."""

    def __init__(self, code: str, message: str, report: ValidationReport | None = None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.report = report


_FENCE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def _candidate_bodies(text: str):
    for m in _FENCE.finditer(text):
        yield m.group(1)
    yield text


def _first_graph_object(text: str):
    decoder = json.JSONDecoder(parse_float=_RawNumber, parse_constant=_RawNumber)
    for body in _candidate_bodies(text):
        pos = body.find("{")
        while pos >= 0:
            try:
                obj, _ = decoder.raw_decode(body, pos)
            except json.JSONDecodeError:
                obj = None
            if isinstance(obj, dict):
                if "items" in obj:
                    return obj
                for v in obj.values():  # {"scene_graph": {...}}
                    if isinstance(v, dict) and "items" in v:
                        return v
            pos = body.find("{", pos + 1)
    return None


def parse_llm_response(text: str, warnings: list | None = None) -> SceneGraph:
    """Pull the first scene-graph JSON body out of a model reply.

    Prose and code fences around the body are ignored. Lenient-validation
    warnings are appended to ``warnings`` when a list is given.
    """
    obj = _first_graph_object(text or "")
    if obj is None:
        raise AnnotationError("unparsable-response", "no scene-graph JSON object in response")
    obj = dict(obj)
    obj.setdefault("relations", [])
    try:
        graph = graph_from_obj(obj)
    except RecordParseError as exc:
        raise AnnotationError("invalid-graph", str(exc)) from None
    report = validate(graph, LENIENT)
    if not report.ok:
        raise AnnotationError("invalid-graph", "; ".join(f"{i.rule} at {i.location}" for i in report.errors),
                              report)
    if warnings is not None:
        warnings.extend(report.warnings)
    return graph


# -- pipeline ----------------------------------------------------------------

@dataclass
class AnnotationJob:
    img_id: str
    image_ref: str
    status: str = "pending"
    attempts: int = 0
    last_error: str | None = None
    name: str = ""
    caption: str = ""
    score: str = ""


def read_manifest(path) -> list[AnnotationJob]:
    """JSON lines with ``img_id`` and ``url`` (or ``image``); optional name/caption_ori/score."""
    jobs = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                ref = obj.get("url") or obj["image"]
                jobs.append(AnnotationJob(str(obj["img_id"]), ref, name=obj.get("name", ""),
                                          caption=obj.get("caption_ori", ""), score=str(obj.get("score", ""))))
            except KeyError as exc:
                raise ValueError(f"{path}:{n}: manifest entry lacks {exc}") from None
    return jobs


def read_journal(path) -> dict[str, tuple[str, int]]:
    """Latest ``(status, attempts)`` per img_id."""
    state: dict[str, tuple[str, int]] = {}
    p = Path(path)
    if not p.exists():
        return state
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4 or parts[1] not in JOURNAL_STATUSES:
                continue  # torn final line after a crash
            if state.get(parts[0], ("",))[0] == "done":
                continue
            state[parts[0]] = (parts[1], int(parts[2]))
    return state


def _output_ids(path) -> set[str]:
    ids = set()
    p = Path(path)
    if not p.exists():
        return ids
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            try:
                ids.add(str(json.loads(line)["img_id"]))
            except (ValueError, KeyError, TypeError):
                continue
    return ids


class _Writer:
    """Serializes output and journal appends; output first so no success is lost."""

    def __init__(self, journal, output, clock):
        self._lock = threading.Lock()
        self._journal = open(journal, "a", encoding="utf-8")
        self._output = open(output, "a", encoding="utf-8") if output is not None else None
        self._clock = clock

    def write(self, job: AnnotationJob, record: DatasetRecord | None):
        with self._lock:
            if record is not None and self._output is not None:
                self._output.write(serialize_record(record) + "\n")
                self._output.flush()
            stamp = datetime.fromtimestamp(self._clock(), timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            self._journal.write(f"{job.img_id}\t{job.status}\t{job.attempts}\t{stamp}\n")
            self._journal.flush()

    def close(self):
        self._journal.close()
        if self._output is not None:
            self._output.close()


def run_pipeline(manifest: Sequence[AnnotationJob], config: PromptConfig, client: ChatClient,
                 parallelism: int = 4, journal="journal.tsv", output=None, max_retries: int = 3,
                 backoff: float = 1.0, sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.time) -> IngestStats:
    """Annotate every job not already done; returns counts for this run.

    Each attempt is one ``client.complete`` call. A job is retried up to
    ``max_retries`` times with exponential backoff (``backoff * 2**k``
    seconds) and then marked failed; the run carries on either way.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    prior = read_journal(journal)
    written = _output_ids(output) if output is not None else set()
    stats = IngestStats()
    writer = _Writer(journal, output, clock)

    pending = []
    for job in manifest:
        status, attempts = prior.get(job.img_id, ("pending", 0))
        if status == "done" or job.img_id in written:
            job.status, job.attempts = "done", max(attempts, job.attempts)
            if status != "done":  # record landed but its journal line did not
                writer.write(job, None)
            continue
        job.status = "pending"
        pending.append(job)

    def work(job: AnnotationJob):
        prompt = build_prompt(config, job.caption)
        for attempt in range(max_retries + 1):
            if attempt:
                sleep(backoff * 2 ** (attempt - 1))
            job.attempts += 1
            try:
                reply = client.complete(prompt, job.image_ref)
                graph = parse_llm_response(reply)
            except Exception as exc:  # endpoint or parse failure: retry
                job.last_error = f"{type(exc).__name__}: {exc}"
                log.debug("job %s attempt %d failed: %s", job.img_id, job.attempts, job.last_error)
                continue
            job.status = "done"
            record = DatasetRecord(job.img_id, job.name, job.caption, job.score, job.image_ref, graph)
            writer.write(job, record)
            return True
        job.status = "failed"
        log.warning("job %s failed after %d attempts: %s", job.img_id, job.attempts, job.last_error)
        writer.write(job, None)
        return False

    try:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(work, job) for job in pending]
            wait(futures, return_when=FIRST_EXCEPTION)
            for fut in futures:
                if fut.done() and fut.exception() is not None:
                    pool.shutdown(wait=True, cancel_futures=True)
                    raise fut.exception()
            for fut, job in zip(futures, pending):
                if fut.result():
                    stats.records_ok += 1
                else:
                    stats._fail(job.img_id)
    finally:
        writer.close()
    return stats


# -- audit -------------------------------------------------------------------

@dataclass(frozen=True)
class AuditSample:
    img_ids: tuple[str, ...]
    seed: int
    sample_size: int


def sample_audit(corpus_ids: Iterable[str], size: int, seed: int) -> AuditSample:
    ids = sorted(set(corpus_ids))
    if size < 0 or size > len(ids):
        raise ValueError(f"cannot sample {size} of {len(ids)} ids")
    return AuditSample(tuple(random.Random(seed).sample(ids, size)), seed, size)


TALLY_FIELDS = ("img_id", "hallucination", "mislabel", "notes")


def render_audit_bundle(sample: AuditSample, records: dict[str, DatasetRecord], out_dir) -> tuple[Path, Path]:
    """Write ``audit_bundle.jsonl`` for reviewers and a blank ``tally.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = out / "audit_bundle.jsonl"
    tally = out / "tally.csv"
    with open(bundle, "w", encoding="utf-8") as fh:
        for img_id in sample.img_ids:
            rec = records[img_id]
            fh.write(json.dumps({
                "img_id": img_id,
                "url": rec.url,
                "caption_ori": rec.caption_ori,
                "triples": [f"{s.label} {r} {o.label}" for s, r, o in triples(rec.graph)],
                "graph": graph_to_obj(rec.graph),
            }, ensure_ascii=False) + "\n")
    with open(tally, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TALLY_FIELDS)
        for img_id in sample.img_ids:
            w.writerow([img_id, "", "", ""])
    return bundle, tally


@dataclass(frozen=True)
class TallyResult:
    reviewed: int
    hallucinations: int
    mislabels: int

    @property
    def hallucination_rate(self) -> float:
        """Percent of reviewed samples marked as hallucinated."""
        return 100.0 * self.hallucinations / self.reviewed if self.reviewed else 0.0

    @property
    def mislabel_rate(self) -> float:
        return 100.0 * self.mislabels / self.reviewed if self.reviewed else 0.0


_MARKED = {"1", "x", "y", "yes", "true"}


def read_tally(path) -> TallyResult:
    reviewed = hall = mis = 0
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            reviewed += 1
            hall += (row.get("hallucination") or "").strip().lower() in _MARKED
            mis += (row.get("mislabel") or "").strip().lower() in _MARKED
    return TallyResult(reviewed, hall, mis)
