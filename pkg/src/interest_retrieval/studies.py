"""Controlled studies on simulated click streams.

Every study trains on the configured training periods (``A`` and ``B`` by
default) and evaluates on the last ``test_tail`` clicks of the evaluation
period. All variants of a study share one candidate sample per held-out
click, so differences between rows come from the variants alone. Documents
are embedded with a vocabulary embedder over the simulator's vocabulary and
key terms drop the simulator's background words.

Studies:

* ``adaptability``  profiles frozen after the first period vs. kept updated
* ``text-ablation`` unit text from key terms only, last title only, or both
* ``pruning``       recency-only, size-only and grouped pruning
* ``unit-cap``      at most 1, 5, 10, 20 units (recency pruning) or no cap
* ``unit-growth``   distribution of big units per user after each period
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .data import Click, group_by_user
from .embedding import EmbedderConfig, make_embedder
from .evaluation import (
    EvalConfig,
    EvalDataset,
    InterestSystem,
    ItemPopSystem,
    build_profiles,
    evaluate,
    format_table,
    metric_names,
)
from .index import build_index
from .keyterm import StopwordExtractor
from .simulator import SimConfig, SimOutput, generate
from .units import UnitConfig, UserProfile

STUDIES = ("adaptability", "text-ablation", "pruning", "unit-cap", "unit-growth")


@dataclass
class StudyResult:
    name: str
    rows: list[dict]
    config: dict = field(default_factory=dict)
    columns: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row.get(k)) for k in self.columns})
        return buf.getvalue()

    def table(self) -> str:
        if self.name == "unit-growth":
            return _plain_table(self.rows, self.columns)
        cutoffs = [int(c[2:]) for c in self.columns if c.startswith("H@")]
        return format_table([(r["variant"], r) for r in self.rows], cutoffs)

    def row(self, variant: str) -> dict:
        for r in self.rows:
            if r["variant"] == variant:
                return r
        raise KeyError(variant)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{self.name}.csv", "json": out / f"{self.name}.json"}
        paths["csv"].write_text(self.to_csv())
        paths["json"].write_text(json.dumps({"study": self.name, "rows": self.rows, "config": self.config}, indent=2))
        return paths


def _fmt(v: object) -> object:
    return f"{v:.6f}" if isinstance(v, float) else v


def _plain_table(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    widths = [max(len(c), *(len(str(_fmt(r.get(c)))) for r in rows)) for c in columns]
    lines = [" | ".join(f"{c:>{w}}" for c, w in zip(columns, widths))]
    lines.append("-" * len(lines[0]))
    lines += [" | ".join(f"{str(_fmt(r.get(c))):>{w}}" for c, w in zip(columns, widths)) for r in rows]
    return "\n".join(lines)


@dataclass
class StudySetup:
    """Simulated data plus everything the studies share."""

    sim: SimOutput
    unit: UnitConfig
    eval: EvalConfig
    train_periods: tuple[str, ...] = ("A", "B")
    eval_period: str = "C"

    def __post_init__(self) -> None:
        periods = self.sim.config.periods
        for p in (*self.train_periods, self.eval_period):
            if p not in periods:
                raise ValueError(f"period {p!r} not simulated (have {', '.join(periods)})")
        self.embedder = make_embedder(EmbedderConfig.for_vocabulary(self.sim.vocabulary))
        self.extractor = StopwordExtractor(self.sim.stopwords)
        self.corpus = build_index(self.sim.corpus, self.embedder)
        self.by_period = {p: group_by_user(self.sim.clicks[p]) for p in periods}
        tail = self.eval.test_tail
        held = self.by_period[self.eval_period]
        self.test = {u: cs[-tail:] for u, cs in held.items() if len(cs) >= tail}
        self.dataset = EvalDataset(self.corpus, self.train_for(self.train_periods), self.test)

    def train_for(self, periods: Sequence[str]) -> dict[str, list[Click]]:
        """Chronological clicks from ``periods`` for every evaluated user."""
        return {u: [c for p in periods for c in self.by_period[p].get(u, [])] for u in self.test}

    def profiles(self, periods: Sequence[str], unit: UnitConfig | None = None) -> dict[str, UserProfile]:
        return build_profiles(self.train_for(periods), self.embedder, unit or self.unit, self.extractor)

    def score(self, name: str, profiles: Mapping[str, UserProfile], users: set[str] | None = None) -> dict:
        dataset = self.dataset if users is None else self._subset(users)
        report = evaluate(InterestSystem(dict(profiles), self.corpus, name), dataset, self.eval)
        units = [len(profiles[u]) for u in dataset.test if u in profiles]
        return {
            "variant": name,
            **report.metrics,
            "users": len(report.per_user),
            "mean_units": sum(units) / len(units) if units else 0.0,
        }

    def _subset(self, users: set[str]) -> EvalDataset:
        sub = EvalDataset(
            self.corpus,
            {u: cs for u, cs in self.dataset.train.items() if u in users},
            {u: cs for u, cs in self.test.items() if u in users},
        )
        sub._samples = self.dataset._samples  # same negatives as the full run
        return sub


def _metric_columns(setup: StudySetup) -> list[str]:
    return ["variant", *metric_names(setup.eval.metric_cutoffs), "users", "mean_units"]


def run_adaptability(setup: StudySetup) -> StudyResult:
    first = setup.train_periods[:1]
    rows = [
        setup.score(f"ira-{'+'.join(first)}", setup.profiles(first)),
        setup.score(f"ira-{'+'.join(setup.train_periods)}", setup.profiles(setup.train_periods)),
    ]
    for periods in (first, setup.train_periods):
        train = [c for cs in setup.train_for(periods).values() for c in cs]
        report = evaluate(ItemPopSystem(train, setup.corpus, name=f"itempop-{'+'.join(periods)}"), setup.dataset, setup.eval)
        rows.append({"variant": report.system, **report.metrics, "users": len(report.per_user), "mean_units": 0.0})
    return StudyResult("adaptability", rows, columns=_metric_columns(setup))


def run_text_ablation(setup: StudySetup) -> StudyResult:
    rows = []
    for label, mode in (("key-terms", "terms"), ("last-title", "title"), ("title+key-terms", "title+terms")):
        rows.append(setup.score(label, setup.profiles(setup.train_periods, replace(setup.unit, text_mode=mode))))
    return StudyResult("text-ablation", rows, columns=_metric_columns(setup))


def run_pruning(setup: StudySetup) -> StudyResult:
    rows = []
    for label in ("recency", "size", "grouped"):
        rows.append(setup.score(label, setup.profiles(setup.train_periods, replace(setup.unit, prune_strategy=label))))
    return StudyResult("pruning", rows, columns=_metric_columns(setup))


def interest_counts(sim: SimOutput, periods: Sequence[str]) -> dict[str, int]:
    """Distinct ground-truth topics each user held over ``periods``."""
    topics: dict[str, set[int]] = {}
    for p in periods:
        for user, active in sim.truth[p].items():
            topics.setdefault(user, set()).update(active)
    return {u: len(t) for u, t in topics.items()}


def run_unit_cap(setup: StudySetup, caps: Sequence[int | None] = (1, 5, 10, 20, None), min_interests: int = 3) -> StudyResult:
    counts = interest_counts(setup.sim, (setup.eval_period,))
    multi = {u for u in setup.test if counts.get(u, 0) >= min_interests}
    rows = []
    for cap in caps:
        if cap is None:
            unit, label = replace(setup.unit, prune_strategy="none", max_units=None), "free"
        else:
            unit, label = replace(setup.unit, prune_strategy="recency", max_units=cap), f"cap-{cap}"
        profiles = setup.profiles(setup.train_periods, unit)
        row = setup.score(label, profiles, multi)
        row["min_interests"] = min_interests
        rows.append(row)
    return StudyResult("unit-cap", rows, columns=[*_metric_columns(setup), "min_interests"])


def run_unit_growth(setup: StudySetup) -> StudyResult:
    # pruning keeps at most keep_per_group big units, so the histogram is bounded
    rows = []
    for i in range(1, len(setup.train_periods) + 1):
        periods = setup.train_periods[:i]
        profiles = setup.profiles(periods)
        big = Counter(sum(u.size >= setup.unit.big_threshold for u in p.units) for p in profiles.values())
        total = max(len(profiles), 1)
        for k in range(setup.unit.keep_per_group + 1):
            rows.append({"periods": "+".join(periods), "big_units": k, "users": big.get(k, 0), "share": big.get(k, 0) / total})
    return StudyResult("unit-growth", rows, columns=["periods", "big_units", "users", "share"])


_RUNNERS: dict[str, Callable[..., StudyResult]] = {
    "adaptability": run_adaptability,
    "text-ablation": run_text_ablation,
    "pruning": run_pruning,
    "unit-cap": run_unit_cap,
    "unit-growth": run_unit_growth,
}


def run_study(
    name: str,
    sim_config: SimConfig = SimConfig(),
    unit: UnitConfig = UnitConfig(),
    eval_config: EvalConfig = EvalConfig(),
    train_periods: Sequence[str] = ("A", "B"),
    eval_period: str = "C",
    unit_caps: Sequence[int | None] = (1, 5, 10, 20, None),
    min_interests: int = 3,
    setup: StudySetup | None = None,
) -> StudyResult:
    """Run one named study; pass ``setup`` to reuse simulated data across studies."""
    if name not in _RUNNERS:
        raise ValueError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    if setup is None:
        setup = StudySetup(generate(sim_config), unit, eval_config, tuple(train_periods), eval_period)
    if name == "unit-cap":
        result = run_unit_cap(setup, unit_caps, min_interests)
    else:
        result = _RUNNERS[name](setup)
    result.config = {
        "simulation": setup.sim.config.to_dict(),
        "unit": setup.unit.to_dict(),
        "eval": setup.eval.to_dict(),
        "train_periods": list(setup.train_periods),
        "eval_period": setup.eval_period,
    }
    return result
