"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(unreadable or malformed input, unknown user, incompatible artifacts).
"""

from __future__ import annotations

import argparse
import fcntl
import json
import logging
import statistics
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Sequence

from .config import ConfigError, GlobalConfig, apply_overrides, load_config
from .data import Click, DataFormatError, corpus_from_clicks, group_by_user, read_clicks, read_corpus
from .embedding import DimensionMismatchError, make_embedder, read_vectors_jsonl
from .evaluation import (
    EvalDataset,
    InterestSystem,
    ItemPopSystem,
    RandomSystem,
    build_profiles,
    evaluate,
    format_table,
    split_dataset,
)
from .index import DocumentIndex, IndexBuildError, IndexFormatError, build_index
from .keyterm import StopwordExtractor, load_stopwords
from .retrieval import EmbedderMismatchError, retrieve
from .simulator import SimConfigError, generate
from .studies import STUDIES, StudySetup, run_study
from .units import Document, DuplicateEventError, ProfileStore, SnapshotError

log = logging.getLogger("interest_retrieval")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SYSTEMS = ("ira", "ira-alt-embedder", "itempop", "random")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="interest-retrieval", description="Interest-unit profiles and retrieval.")
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--seed", type=int, help="seed for every randomized component")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. --set unit.tau=0.7 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic corpus and click logs")
    s.add_argument("--out", help="output directory (default: paths.out_dir)")

    s = sub.add_parser("ingest", help="index a corpus and print dataset statistics")
    s.add_argument("--corpus")
    s.add_argument("--clicks", help="optional click log for interaction statistics")
    s.add_argument("--stopwords")
    s.add_argument("--vectors", help="precomputed vectors (JSON lines of doc_id, vector)")
    s.add_argument("--index", help="where to write the index")
    s.add_argument("--mode", choices=("exact", "approximate"))

    s = sub.add_parser("update", help="replay clicks into persisted profiles")
    s.add_argument("--clicks")
    s.add_argument("--stopwords")
    s.add_argument("--snapshots")

    s = sub.add_parser("retrieve", help="rank documents for one user (JSON lines)")
    s.add_argument("--user", required=True)
    s.add_argument("-n", "--max-results", type=int)
    s.add_argument("--index")
    s.add_argument("--snapshots")
    s.add_argument("--include-clicked", action="store_true", help="keep documents the user already clicked")

    s = sub.add_parser("eval", help="offline evaluation with sampled candidates")
    s.add_argument("--system", action="append", choices=SYSTEMS, help="repeatable; default: all")
    s.add_argument("--corpus")
    s.add_argument("--clicks")
    s.add_argument("--stopwords")
    s.add_argument("--report", help="write the JSON report here (default: stdout after the table)")

    s = sub.add_parser("study", help="run a study on simulated data")
    s.add_argument("name", choices=(*STUDIES, "all"))
    s.add_argument("--out", help="directory for CSV and JSON outputs (default: paths.out_dir)")

    sub.add_parser("config", help="print the effective configuration as YAML")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cfg = apply_overrides(load_config(args.config), args.overrides)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return _COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, SimConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DataFormatError, SnapshotError, IndexFormatError, IndexBuildError,
            EmbedderMismatchError, DimensionMismatchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


# -- helpers -------------------------------------------------------------------


def _path(value: str | None, name: str, must_exist: bool = True) -> Path:
    if value is None:
        raise UsageError(f"no {name} path given (flag or paths.{name} in the config)")
    path = Path(value)
    if must_exist and not path.exists():
        raise DataError(f"{name} file not found: {path}")
    return path


def _extractor(stopwords: str | None) -> StopwordExtractor:
    if stopwords is None:
        return StopwordExtractor()
    return StopwordExtractor(load_stopwords(_path(stopwords, "stopwords")))


@contextmanager
def _locked(path: Path) -> Iterator[None]:
    """Advisory exclusive lock guarding a snapshot file against concurrent writers."""
    with open(f"{path}.lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _load_store(path: Path, cfg: GlobalConfig) -> ProfileStore:
    embedder = make_embedder(cfg.embedder)
    if not path.exists():
        return ProfileStore(embedder, cfg.unit)
    store = ProfileStore.load(path, embedder, cfg.unit)
    for user_id, profile in store.items():
        if profile.embedder_id and profile.embedder_id != embedder.fingerprint:
            raise DataError(f"profile {user_id!r} in {path} was built with a different embedder")
    return store


def _echo(cfg: GlobalConfig) -> dict:
    return cfg.to_dict()


# -- commands ------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    out = generate(cfg.simulation)
    paths = out.write(args.out or cfg.paths.out_dir)
    for name, path in sorted(paths.items()):
        print(f"{name}\t{path}")
    return EXIT_OK


def dataset_stats(docs: Sequence[Document], clicks: Sequence[Click] | None, cfg: GlobalConfig) -> dict:
    stats: dict = {
        "documents": len(docs),
        "distinct_key_terms": len({t for d in docs for t in d.key_terms}),
        "mean_title_terms": statistics.fmean(sum(d.key_terms.values()) for d in docs) if docs else 0.0,
    }
    if clicks is not None:
        by_user = group_by_user(clicks)
        split = split_dataset(by_user, cfg.eval)
        train_items = {c.doc_id for cs in split.train.values() for c in cs}
        test_items = {c.doc_id for cs in split.test.values() for c in cs}
        known = {d.doc_id for d in docs}
        stats.update(
            users=len(by_user),
            interactions=len(clicks),
            clicked_items=len({c.doc_id for c in clicks}),
            clicks_outside_corpus=sum(c.doc_id not in known for c in clicks),
            eligible_users=len(split.test),
            excluded_users=split.excluded,
            test_items=len(test_items),
            cold_items=len(test_items - train_items),
        )
    return stats


def cmd_ingest(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    corpus_path = _path(args.corpus or cfg.paths.corpus, "corpus")
    clicks_arg = args.clicks or cfg.paths.clicks
    clicks = read_clicks(_path(clicks_arg, "clicks")) if clicks_arg else None
    docs = read_corpus(corpus_path, _extractor(args.stopwords or cfg.paths.stopwords))
    embedder = make_embedder(cfg.embedder)
    vectors_arg = args.vectors or cfg.paths.vectors
    vectors = read_vectors_jsonl(_path(vectors_arg, "vectors"), embedder.dimension) if vectors_arg else None
    index = build_index(docs, embedder, args.mode or cfg.index.mode, cfg.index.ivf, vectors)
    index_path = _path(args.index or cfg.paths.index, "index", must_exist=False)
    index.save(index_path)
    stats = dataset_stats(docs, clicks, cfg)
    for key, value in stats.items():
        print(f"{key}\t{json.dumps(value) if isinstance(value, dict) else value}")
    print(f"index\t{index_path}")
    return EXIT_OK


def cmd_update(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    clicks = read_clicks(_path(args.clicks or cfg.paths.clicks, "clicks"))
    extractor = _extractor(args.stopwords or cfg.paths.stopwords)
    snap = _path(args.snapshots or cfg.paths.snapshots, "snapshots", must_exist=False)
    applied = duplicates = 0
    with _locked(snap):
        store = _load_store(snap, cfg)
        for user_id, user_clicks in group_by_user(clicks).items():
            for click in user_clicks:
                try:
                    store.update(user_id, click.to_document(extractor))
                    applied += 1
                except DuplicateEventError:
                    duplicates += 1
        store.save(snap)
    units = sum(len(p) for _, p in store.items())
    print(f"applied\t{applied}\nduplicates\t{duplicates}\nusers\t{len(store)}\nunits\t{units}")
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    snap = _path(args.snapshots or cfg.paths.snapshots, "snapshots")
    index = DocumentIndex.load(_path(args.index or cfg.paths.index, "index"))
    store = _load_store(snap, cfg)
    if args.user not in store:
        raise DataError(f"unknown user {args.user!r}")
    rcfg = cfg.retrieval
    if args.max_results is not None:
        if args.max_results < 1:
            raise UsageError("--max-results must be >= 1")
        rcfg = replace(rcfg, max_results=args.max_results)
    if args.include_clicked:
        rcfg = replace(rcfg, exclude_clicked=False)
    for record in retrieve(store.get(args.user), index, rcfg).to_records():
        print(json.dumps(record))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    clicks = read_clicks(_path(args.clicks or cfg.paths.clicks, "clicks"))
    extractor = _extractor(args.stopwords or cfg.paths.stopwords)
    corpus_arg = args.corpus or cfg.paths.corpus
    docs = read_corpus(_path(corpus_arg, "corpus"), extractor) if corpus_arg else []
    known = {d.doc_id for d in docs}
    docs += [d for d in corpus_from_clicks(clicks, extractor) if d.doc_id not in known]

    split = split_dataset(group_by_user(clicks), cfg.eval)
    embedder = make_embedder(cfg.embedder)
    dataset = EvalDataset.from_split(split, docs, embedder)
    train_clicks = [c for cs in split.train.values() for c in cs]
    echo = _echo(cfg)
    reports = []
    for name in args.system or SYSTEMS:
        if name == "ira":
            system = InterestSystem(build_profiles(split.train, embedder, cfg.unit, extractor), dataset.corpus, name)
        elif name == "ira-alt-embedder":
            alt = make_embedder(cfg.alt_embedder)
            system = InterestSystem(build_profiles(split.train, alt, cfg.unit, extractor), build_index(docs, alt), name)
        elif name == "itempop":
            system = ItemPopSystem(train_clicks, dataset.corpus)
        else:
            system = RandomSystem(cfg.eval.rng_seed)
        reports.append(evaluate(system, dataset, cfg.eval, echo))
    print(format_table([(r.system, r.metrics) for r in reports], cfg.eval.metric_cutoffs))
    for r in reports:
        if r.skipped_flag:
            print(f"warning: {r.system} skipped {r.skipped_users} users", file=sys.stderr)
    payload = json.dumps({"reports": [r.to_dict() for r in reports], "config": echo}, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(payload + "\n")
    else:
        print(payload)
    return EXIT_OK


def cmd_study(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    names = STUDIES if args.name == "all" else (args.name,)
    st = cfg.studies
    setup = StudySetup(generate(cfg.simulation), cfg.unit, cfg.eval, st.train_periods, st.eval_period)
    out_dir = Path(args.out or cfg.paths.out_dir)
    for name in names:
        result = run_study(name, unit_caps=st.unit_caps, min_interests=st.min_interests, setup=setup)
        result.config = _echo(cfg)
        paths = result.write(out_dir)
        print(f"== {name} ({paths['csv']})")
        print(result.table())
    return EXIT_OK


def cmd_config(args: argparse.Namespace, cfg: GlobalConfig) -> int:
    sys.stdout.write(cfg.to_yaml())
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "update": cmd_update,
    "retrieve": cmd_retrieve,
    "eval": cmd_eval,
    "study": cmd_study,
    "config": cmd_config,
}


if __name__ == "__main__":
    sys.exit(main())
