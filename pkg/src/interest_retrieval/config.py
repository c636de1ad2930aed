"""Global configuration: one YAML file, overridable from the command line.

Top-level sections mirror the modules: ``embedder``, ``alt_embedder``,
``unit``, ``retrieval``, ``index``, ``eval``, ``simulation``, ``studies`` and
``paths``, plus a global ``seed``. Unknown keys are rejected so typos fail
loudly. ``embedder.vocabulary_file`` may point at a JSON list or a
one-term-per-line file instead of listing the vocabulary inline. Relative
paths, including the defaults, resolve against the config file's directory
(or the working directory when no file is given).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .embedding import EmbedderConfig
from .evaluation import EvalConfig
from .index import IVFParams
from .retrieval import RetrievalConfig
from .simulator import SimConfig
from .units import UnitConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IndexConfig:
    mode: str = "exact"
    ivf: IVFParams = field(default_factory=IVFParams)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "ivf": self.ivf.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> IndexConfig:
        _reject_unknown("index", data, {"mode", "ivf"})
        mode = data.get("mode", "exact")
        if mode not in ("exact", "approximate"):
            raise ConfigError(f"index.mode must be 'exact' or 'approximate', got {mode!r}")
        return cls(mode, IVFParams.from_dict(data.get("ivf", {})))


@dataclass(frozen=True)
class StudyConfig:
    unit_caps: tuple[int | None, ...] = (1, 5, 10, 20, None)  # None = unconstrained
    train_periods: tuple[str, ...] = ("A", "B")
    eval_period: str = "C"
    min_interests: int = 3

    def to_dict(self) -> dict:
        return {
            "unit_caps": ["free" if c is None else c for c in self.unit_caps],
            "train_periods": list(self.train_periods),
            "eval_period": self.eval_period,
            "min_interests": self.min_interests,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> StudyConfig:
        _reject_unknown("studies", data, set(cls.__dataclass_fields__))
        kw: dict[str, Any] = dict(data)
        if "unit_caps" in kw:
            kw["unit_caps"] = tuple(None if c in (None, "free") else int(c) for c in kw["unit_caps"])
        if "train_periods" in kw:
            kw["train_periods"] = tuple(kw["train_periods"])
        return cls(**kw)


@dataclass(frozen=True)
class Paths:
    corpus: str | None = None
    clicks: str | None = None
    stopwords: str | None = None
    snapshots: str | None = "profiles.jsonl"
    index: str | None = "index.bin"
    vectors: str | None = None
    out_dir: str = "out"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Mapping) -> Paths:
        _reject_unknown("paths", data, set(cls.__dataclass_fields__))
        return cls(**{k: (None if v is None else str(v)) for k, v in data.items()})

    def resolved(self, base_dir: str | Path) -> Paths:
        """Every relative path made absolute against ``base_dir``."""
        base = Path(base_dir).resolve()
        return Paths(**{k: _resolve(getattr(self, k), base) for k in self.__dataclass_fields__})


def _resolve(value: object, base_dir: str | Path | None) -> str | None:
    if value is None:
        return None
    path = Path(str(value))
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return str(path)


def _default_alt_embedder() -> EmbedderConfig:
    return EmbedderConfig(kind="hashed", dimension=16, seed=7)


@dataclass(frozen=True)
class GlobalConfig:
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    # weaker embedder standing in for an unaligned model in comparisons
    alt_embedder: EmbedderConfig = field(default_factory=_default_alt_embedder)
    unit: UnitConfig = field(default_factory=UnitConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    studies: StudyConfig = field(default_factory=StudyConfig)
    paths: Paths = field(default_factory=Paths)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "embedder": self.embedder.to_dict(),
            "alt_embedder": self.alt_embedder.to_dict(),
            "unit": self.unit.to_dict(),
            "retrieval": self.retrieval.to_dict(),
            "index": self.index.to_dict(),
            "eval": self.eval.to_dict(),
            "simulation": self.simulation.to_dict(),
            "studies": self.studies.to_dict(),
            "paths": self.paths.to_dict(),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: Mapping | None, base_dir: str | Path | None = None) -> GlobalConfig:
        data = dict(data or {})
        _reject_unknown("config", data, set(cls.__dataclass_fields__))
        try:
            cfg = cls(
                embedder=_embedder_from(data.get("embedder", {}), base_dir),
                alt_embedder=_embedder_from(data["alt_embedder"], base_dir)
                if "alt_embedder" in data
                else _default_alt_embedder(),
                unit=UnitConfig.from_dict(_section("unit", data, UnitConfig)),
                retrieval=RetrievalConfig.from_dict(_section("retrieval", data, RetrievalConfig)),
                index=IndexConfig.from_dict(data.get("index", {})),
                eval=EvalConfig.from_dict(_section("eval", data, EvalConfig)),
                simulation=SimConfig.from_dict(_section("simulation", data, SimConfig)),
                studies=StudyConfig.from_dict(data.get("studies", {})),
                paths=Paths.from_dict(data.get("paths", {})),
                seed=int(data.get("seed", 0)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if "seed" in data:
            cfg = cfg.with_seed(cfg.seed)
        return cfg

    def resolved(self, base_dir: str | Path) -> GlobalConfig:
        return replace(self, paths=self.paths.resolved(base_dir))

    def with_seed(self, seed: int) -> GlobalConfig:
        """Propagate one seed into every seeded component."""
        return replace(
            self,
            seed=seed,
            eval=replace(self.eval, rng_seed=seed),
            simulation=replace(self.simulation, seed=seed),
            index=replace(self.index, ivf=replace(self.index.ivf, seed=seed)),
        )


def _reject_unknown(section: str, data: Mapping, allowed: set[str]) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{section} must be a mapping")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def _section(name: str, data: Mapping, cls: type) -> Mapping:
    sec = data.get(name, {}) or {}
    _reject_unknown(name, sec, set(cls.__dataclass_fields__))
    return sec


def _embedder_from(data: Mapping, base_dir: str | Path | None) -> EmbedderConfig:
    _reject_unknown("embedder", data, {"kind", "dimension", "vocabulary", "vocabulary_file", "seed"})
    data = dict(data)
    vocab_file = data.pop("vocabulary_file", None)
    if vocab_file is not None:
        data["vocabulary"] = read_vocabulary(_resolve(vocab_file, base_dir))
    return EmbedderConfig.from_dict(data)


def read_vocabulary(path: str | Path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        return [str(t) for t in json.loads(text)]
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_config(path: str | Path | None) -> GlobalConfig:
    """Read a YAML config; without a file, defaults with paths relative to the cwd."""
    if path is None:
        return GlobalConfig().resolved(Path.cwd())
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    base = Path(path).parent
    return GlobalConfig.from_dict(data, base_dir=base).resolved(base)


def apply_overrides(cfg: GlobalConfig, overrides: list[str]) -> GlobalConfig:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars."""
    if not overrides:
        return cfg
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"unknown config section {dotted!r}")
            node = node[k]
        node[keys[-1]] = yaml.safe_load(raw)
    return GlobalConfig.from_dict(data)
