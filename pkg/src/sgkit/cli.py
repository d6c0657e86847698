"""Command-line entry point.

Exit codes: 0 success, 1 domain errors present, 2 usage or I/O failure.
Every subcommand writes ``run_manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, get_bool, get_float, get_int, load_config
from .io import (IngestIOError, SplitSpec, check_split_lists, iter_records, read_id_list,
                 stream_records, split_dataset, write_split, SPLIT_NAMES)
from .model import LENIENT, STRICT, validate

log = logging.getLogger("sgkit")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolved_config(args, cfg: dict) -> dict:
    skip = {"func", "inputs_for_digest"}
    out = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in skip}
    out["config_file"] = cfg
    return out


def _write_manifest(args, cfg: dict, inputs: list) -> None:
    resolved = _resolved_config(args, cfg)
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    manifest = {
        "subcommand": args.command,
        "config": resolved,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "inputs": {str(p): _digest(p) for p in inputs if p and Path(p).is_file()},
        "versions": {
            "sgkit": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kernels": kernels.BACKEND,
        },
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True, default=str))


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _records(path):
    return iter_records(path)


# -- subcommands -------------------------------------------------------------

def cmd_validate(args, cfg) -> int:
    mode = STRICT if args.strict else LENIENT
    n_bad = n_records = 0
    report_path = _out(args) / "validation_report.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        def on_record(rec):
            nonlocal n_bad, n_records
            n_records += 1
            rep = validate(rec, mode)
            if not rep.ok:
                n_bad += 1
            if rep.errors or rep.warnings:
                fh.write(json.dumps({"img_id": rec.img_id, **rep.to_dict()}, ensure_ascii=False) + "\n")

        def on_error(err):
            nonlocal n_bad
            n_bad += 1
            fh.write(json.dumps({"location": err.location, "errors": [[err.code, err.location, str(err)]],
                                 "warnings": []}) + "\n")

        stats = stream_records(args.corpus, on_record, on_error)
    summary = {"mode": mode, "records_ok": stats.records_ok, "records_unparsable": stats.records_failed,
               "records_with_errors": n_bad}
    (_out(args) / "validation_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{n_records} records parsed, {stats.records_failed} unparsable, {n_bad} with errors ({mode})")
    return EXIT_DOMAIN if n_bad else EXIT_OK


def cmd_stats(args, cfg) -> int:
    from .analytics import OBJECT_WORD_BINS, SG_WORD_BINS, StatsAccumulator, parse_bins

    bins = {"object": OBJECT_WORD_BINS, "sg": SG_WORD_BINS}
    for spec in args.bins or []:
        kind, _, edges = spec.partition("=")
        if kind not in bins or not edges:
            raise UsageError(f"--bins expects object=EDGES or sg=EDGES, got {spec!r}")
        try:
            bins[kind] = parse_bins(edges)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    acc = StatsAccumulator(object_bins=bins["object"], sg_bins=bins["sg"])
    for rec in _records(args.corpus):
        acc.add(rec)
    report = acc.report(args.top_k)
    out = _out(args)
    (out / "stats.json").write_text(report.to_json() + "\n", encoding="utf-8")
    table = report.format_table()
    (out / "stats.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_bench(args, cfg) -> int:
    from .evalkit import select_complex

    records = _records(args.corpus)
    if args.ids:
        keep = set(read_id_list(args.ids))
        records = (r for r in records if r.img_id in keep)
    manifest = select_complex(records, args.threshold, args.split_name)
    path = manifest.write(_out(args) / "bench_manifest.txt")
    print(f"selected {len(manifest.img_ids)} of {manifest.n_scanned} records with > {args.threshold} relations -> {path}")
    return EXIT_OK


def cmd_metrics(args, cfg) -> int:
    from .evalkit import accuracy_batch, corpus_iou, format_iou_table, match_records

    out = _out(args)
    if args.protocol:
        if len(args.inputs) != 1:
            raise UsageError("--protocol takes exactly one corpus")
        from .clients import HttpChatClient, HttpImageGenerator

        for key in ("endpoint", "generator_endpoint"):
            if key not in cfg:
                raise UsageError(f"config needs '{key}' for --protocol")
        extractor = HttpChatClient(cfg["endpoint"], cfg.get("model", "gpt-4o"), cfg.get("key_env"),
                                   get_float(cfg, "temperature", 0.0))
        generator = HttpImageGenerator(cfg["generator_endpoint"], cfg.get("generator_key_env"))
        records = list(_records(args.inputs[0]))
        if args.limit:
            records = records[: args.limit]
        result = accuracy_batch(records, generator, extractor, args.protocol, get_int(cfg, "parallelism", 4))
        if result.failures:
            (out / "failures.tsv").write_text("".join(f"{i}\t{e}\n" for i, e in result.failures))
    else:
        if len(args.inputs) != 2:
            raise UsageError("metrics needs PRED and REF corpora")
        pairs, missing = match_records(_records(args.inputs[0]), _records(args.inputs[1]))
        result = corpus_iou(pairs)
        if missing:
            log.warning("%d reference records have no prediction", len(missing))
    if not result.rows:
        print("no records scored")
        return EXIT_DOMAIN
    mean = result.mean()
    (out / "iou_table.tsv").write_text(format_iou_table(result.rows, mean, result.n_success))
    print(f"SG-IoU {mean.sg_iou:.4f}  Entity-IoU {mean.entity_iou:.4f}  Relation-IoU {mean.relation_iou:.4f}"
          f"  (n={result.n_success})")
    return EXIT_OK


def cmd_split(args, cfg) -> int:
    ids = [r.img_id for r in _records(args.corpus)]
    out = _out(args)
    if args.from_lists:
        src = Path(args.from_lists)
        lists = {name: read_id_list(src / f"{name}.txt") for name in SPLIT_NAMES if (src / f"{name}.txt").exists()}
        problems = check_split_lists(lists, set(ids))
        for p in problems[:20]:
            print(p, file=sys.stderr)
        if problems:
            return EXIT_DOMAIN
        write_split(out, lists.get("train", []), lists.get("val", []), lists.get("test", []))
        print(" ".join(f"{k}={len(v)}" for k, v in lists.items()))
        return EXIT_OK
    spec = SplitSpec(args.train, args.val, args.test, args.seed)
    try:
        train, val, test = split_dataset(ids, spec)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    write_split(out, train, val, test)
    print(f"train={len(train)} val={len(val)} test={len(test)} seed={args.seed}")
    return EXIT_OK


def cmd_encode(args, cfg) -> int:
    from .encoder import (HashEmbeddingBackend, HttpEmbeddingBackend, assemble, init_params,
                          load_params, save_params)

    if args.backend == "http":
        if "embed_endpoint" not in cfg:
            raise UsageError("config needs 'embed_endpoint' for --backend http")
        backend = HttpEmbeddingBackend(cfg["embed_endpoint"], cfg.get("embed_model", ""), args.dim,
                                       cfg.get("embed_key_env"))
    else:
        backend = HashEmbeddingBackend(args.dim, args.seed)
    if args.params:
        params = load_params(args.params, expected_dim=args.dim)
    else:
        params = init_params(args.dim, args.hidden, args.layers, seed=args.seed)
    record = None
    for rec in _records(args.corpus):
        if args.img_id is None or rec.img_id == args.img_id:
            record = rec
            break
    if record is None:
        print(f"error: no record {args.img_id!r} in {args.corpus}", file=sys.stderr)
        return EXIT_DOMAIN
    rep = validate(record.graph, LENIENT)
    if not rep.ok:
        print(f"error: graph of {record.img_id} is invalid: {rep.errors[0].rule}", file=sys.stderr)
        return EXIT_DOMAIN
    emb = assemble(record.graph, backend, params, include_attributes=not args.no_attributes)
    out = _out(args)
    np.save(out / "embedding.npy", emb.vectors)
    (out / "embedding.provenance.json").write_text(json.dumps(
        {"img_id": record.img_id, "dim": args.dim, "alpha": params.alpha, "rows": emb.tags()}, indent=2) + "\n")
    if args.save_params:
        save_params(params, out / "params.npz")
    print(f"{record.img_id}: {len(emb)} vectors ({emb.n_triples} triples) of dim {args.dim}")
    return EXIT_OK


def cmd_annotate(args, cfg) -> int:
    from .annotator import DEFAULT_RULES, PromptConfig, read_manifest, run_pipeline
    from .clients import HttpChatClient

    if "endpoint" not in cfg:
        raise UsageError("annotate needs --config with an 'endpoint' key")
    rules = DEFAULT_RULES
    if cfg.get("rules_file"):
        rules = tuple(l.strip() for l in Path(cfg["rules_file"]).read_text().splitlines() if l.strip())
    prompt = PromptConfig(rule_texts=rules, model_name=cfg.get("model", "gpt-4o"),
                          temperature=get_float(cfg, "temperature", 0.0),
                          include_caption=get_bool(cfg, "include_caption", False))
    client = HttpChatClient(cfg["endpoint"], prompt.model_name, cfg.get("key_env"), prompt.temperature)
    jobs = read_manifest(args.manifest)
    out = _out(args)
    stats = run_pipeline(jobs, prompt, client, parallelism=get_int(cfg, "parallelism", 4),
                         journal=out / "journal.tsv", output=out / "records.jsonl",
                         max_retries=get_int(cfg, "retries", 3), backoff=get_float(cfg, "backoff", 1.0))
    done = sum(j.status == "done" for j in jobs)
    print(f"{done}/{len(jobs)} done ({stats.records_ok} this run), {stats.records_failed} failed")
    return EXIT_DOMAIN if stats.records_failed else EXIT_OK


def cmd_audit(args, cfg) -> int:
    from .annotator import read_tally, render_audit_bundle, sample_audit

    if args.tally:
        res = read_tally(args.tally)
        print(f"reviewed {res.reviewed}: hallucination {res.hallucination_rate:.1f}%, "
              f"mislabel {res.mislabel_rate:.1f}%")
        (_out(args) / "audit_rates.json").write_text(json.dumps({
            "reviewed": res.reviewed, "hallucinations": res.hallucinations, "mislabels": res.mislabels,
            "hallucination_rate_pct": res.hallucination_rate, "mislabel_rate_pct": res.mislabel_rate,
        }, indent=2) + "\n")
        return EXIT_OK
    if not args.corpus:
        raise UsageError("audit needs a corpus (or --tally)")
    records = {r.img_id: r for r in _records(args.corpus)}
    try:
        sample = sample_audit(records, args.n, args.seed)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    bundle, tally = render_audit_bundle(sample, records, _out(args))
    print(f"sampled {len(sample.img_ids)} records -> {bundle}, tally sheet {tally}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _common(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand."""
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None), help="flat key = value config file")
    common.add_argument("--seed", type=int, default=d(0))
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--strict", action="store_true", default=d(False), help="apply the construction rules")
    mode.add_argument("--lenient", action="store_true", default=d(False), help="accept what exists (default)")
    common.add_argument("--out", default=d("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(False)
    p = argparse.ArgumentParser(prog="sgkit", description=__doc__.splitlines()[0], parents=[_common(True)])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check a corpus against the record rules")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("stats", parents=[common], help="dataset statistics report")
    s.add_argument("corpus")
    s.add_argument("--bins", action="append", metavar="KIND=EDGES",
                   help="histogram edges, e.g. object=0,5,10,20 or sg=0,10,20,30")
    s.add_argument("--top-k", type=int, default=10)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("annotate", parents=[common], help="annotate images through a chat endpoint")
    s.add_argument("manifest", help="JSON lines with img_id and url")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("bench", parents=[common], help="select complex scenes")
    s.add_argument("corpus")
    s.add_argument("--threshold", type=int, default=4, help="keep records with more relations than this")
    s.add_argument("--ids", help="restrict to the ids listed in this file (e.g. test.txt)")
    s.add_argument("--split-name", default="test")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("metrics", parents=[common], help="SG/Entity/Relation IoU")
    s.add_argument("inputs", nargs="+", help="PRED REF, or one corpus with --protocol")
    s.add_argument("--protocol", choices=("caption", "sg"),
                   help="run the annotation-accuracy protocol against remote services")
    s.add_argument("--limit", type=int, default=300, help="records used by --protocol")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("split", parents=[common], help="deterministic train/val/test split")
    s.add_argument("corpus")
    s.add_argument("--train", type=int, default=0)
    s.add_argument("--val", type=int, default=0)
    s.add_argument("--test", type=int, default=0)
    s.add_argument("--from-lists", help="directory with externally provided train/val/test.txt")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("encode", parents=[common], help="scene-graph embedding of one record")
    s.add_argument("corpus")
    s.add_argument("--img-id")
    s.add_argument("--params", help="encoder checkpoint (.npz)")
    s.add_argument("--dim", type=int, default=512)
    s.add_argument("--hidden", type=int, default=512)
    s.add_argument("--layers", type=int, default=5)
    s.add_argument("--backend", choices=("hash", "http"), default="hash")
    s.add_argument("--no-attributes", action="store_true", help="leave attributes out of triple text")
    s.add_argument("--save-params", action="store_true")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("audit", parents=[common], help="sample annotations for human review")
    s.add_argument("corpus", nargs="?")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--tally", help="score a filled-in tally.csv instead of sampling")
    s.set_defaults(func=cmd_audit)
    return p


def _inputs(args) -> list:
    names = ("corpus", "manifest", "ids", "params", "tally")
    found = [getattr(args, n, None) for n in names]
    found += list(getattr(args, "inputs", None) or [])
    return [f for f in found if f]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        _write_manifest(args, cfg, _inputs(args))
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IngestIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # malformed record in a subcommand that needs a clean corpus
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
