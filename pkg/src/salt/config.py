"""Run configuration: one YAML file with nested sections, validated before any work.

Unknown keys and ill-typed values are collected across all sections and
reported together. ``--set section.key=value`` style overrides are applied on
top of the file. The resolved configuration is written as canonical JSON
(sorted keys) so its hash identifies the run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .codeswitch import AugmentationConfig
from .errors import ConfigError
from .mixup import MixupConfig
from .synth import PretrainConfig, SyntheticLanguageSpec
from .trainer import TrainConfig

BACKENDS = ("toy", "pretrained")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-7``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:\d+\.?\d*|\.\d+)[eE][-+]?\d+$"),
    list("-+0123456789."),
)


def load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)
TTEST_VARIANTS = ("student", "welch", "paired")


@dataclass
class ScorerSection:
    backend: str = "toy"
    # toy: directory written by ``synth pretrain``; pretrained: model name or path
    checkpoint: str | None = None
    max_length: int = 128


@dataclass
class VocabSection:
    limit: int = 10000


@dataclass
class EvalSection:
    generalized: bool = False
    batch_size: int = 256
    ttest: str = "student"
    alpha: float = 0.05


@dataclass
class SynthSection:
    spec: SyntheticLanguageSpec = field(default_factory=SyntheticLanguageSpec)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    variants: tuple[str, ...] = ("baseline", "salt", "wo_mixup", "en_only")


@dataclass
class RunConfig:
    seed: int = 1
    output_dir: str = "runs"
    scorer: ScorerSection = field(default_factory=ScorerSection)
    vocab: VocabSection = field(default_factory=VocabSection)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    mixup: MixupConfig = field(default_factory=MixupConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    synth: SynthSection = field(default_factory=SynthSection)

    explicit_keys: frozenset = field(default=frozenset(), repr=False, compare=False)

    def train_config(self) -> TrainConfig:
        """Training config with the global seed and the top-level mixup section applied."""
        return dataclasses.replace(self.train, seed=self.seed, mixup=dataclasses.replace(self.mixup))

    def augment_config(self) -> AugmentationConfig:
        return dataclasses.replace(self.augment, seed=self.seed)

    def to_dict(self) -> dict:
        return _plain(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def write_snapshot(self, directory: str | Path) -> Path:
        path = Path(directory) / "resolved_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({**self.to_dict(), "config_hash": self.config_hash()}, indent=2, sort_keys=True) + "\n")
        return path


# keys that live at the top level only; the section copies are filled from them
_GLOBAL_ONLY = {"train": {"seed", "mixup"}, "augment": {"seed"}}


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name != "explicit_keys"}
    if isinstance(obj, (tuple, list)):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    return obj


def _check_type(value, hint, where: str, problems: list[str]):
    """Coerce ``value`` to ``hint`` where lossless; record a problem otherwise."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_type(value, inner[0], where, problems)
    if hint is bool:
        if not isinstance(value, bool):
            problems.append(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where}: expected a number, got {value!r}")
            return value
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            problems.append(f"{where}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        if isinstance(value, str) or not isinstance(value, (list, tuple)):
            problems.append(f"{where}: expected a list, got {value!r}")
            return value
        return tuple(_check_type(v, args[0], f"{where}[{k}]", problems) for k, v in enumerate(value))
    if origin is dict:
        if not isinstance(value, dict):
            problems.append(f"{where}: expected a mapping, got {value!r}")
            return value
        return {str(k): _check_type(v, args[1], f"{where}.{k}", problems) for k, v in value.items()}
    return value


def _build(cls, data, where: str, problems: list[str]):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
        return cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - _GLOBAL_ONLY.get(where, set()) - {"explicit_keys"}
    for key in data:
        if key not in names:
            problems.append(f"unknown key {'.'.join(p for p in (where, str(key)) if p)}")
    kwargs = {}
    for name in names & set(data):
        path = f"{where}.{name}" if where else name
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, data[name], path, problems)
        else:
            kwargs[name] = _check_type(data[name], hint, path, problems)
    try:
        obj = cls(**kwargs)
    except (ConfigError, TypeError, ValueError) as exc:
        problems.append(f"{where or 'config'}: {exc}")
        return cls()
    if hasattr(obj, "validate"):
        try:
            obj.validate()
        except ConfigError as exc:
            problems.append(f"{where}: {exc}")
    return obj


def _check_values(cfg: RunConfig, problems: list[str]) -> None:
    if cfg.scorer.backend not in BACKENDS:
        problems.append(f"scorer.backend: {cfg.scorer.backend!r} not one of {BACKENDS}")
    if cfg.scorer.max_length < 4:
        problems.append("scorer.max_length: must be >= 4")
    if cfg.vocab.limit < 1:
        problems.append("vocab.limit: must be positive")
    if cfg.eval.ttest not in TTEST_VARIANTS:
        problems.append(f"eval.ttest: {cfg.eval.ttest!r} not one of {TTEST_VARIANTS}")
    if not 0 < cfg.eval.alpha < 1:
        problems.append("eval.alpha: must lie in (0, 1)")
    t = cfg.train
    if t.epochs < 1 or (t.max_steps is not None and t.max_steps < 1):
        problems.append("train.epochs/max_steps: must be positive")
    if t.batch_size < 1 or t.eval_batch_size < 1:
        problems.append("train.batch_size: must be positive")
    if t.learning_rate <= 0:
        problems.append("train.learning_rate: must be positive")
    if not 0 <= t.warmup_ratio < 1:
        problems.append("train.warmup_ratio: must lie in [0, 1)")
    if t.n_classes < 2:
        problems.append("train.n_classes: must be >= 2")
    if t.augmented_languages is not None:
        extra = sorted(set(t.augmented_languages) - set(cfg.augment.target_languages))
        if extra:
            problems.append(f"train.augmented_languages: {extra} not in augment.target_languages")
    if t.source_language != cfg.augment.source_language:
        problems.append("train.source_language and augment.source_language differ")
    from .pipeline import VARIANTS

    bad = [v for v in cfg.synth.variants if v not in VARIANTS]
    if bad:
        problems.append(f"synth.variants: unknown {bad}; choose from {VARIANTS}")
    if not cfg.synth.seeds:
        problems.append("synth.seeds: must be nonempty")


def apply_overrides(data: dict, overrides) -> dict:
    """``["train.epochs=3", ...]`` -> nested dict updates; values parsed as YAML scalars."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty key")
        node = data
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: {p} is not a section")
            node = nxt
        node[parts[-1]] = load_yaml(raw)
    return data


def _dotted_keys(data, prefix: str = "") -> set[str]:
    out = set()
    for k, v in (data or {}).items():
        key = f"{prefix}{k}"
        out.add(key)
        if isinstance(v, dict):
            out |= _dotted_keys(v, key + ".")
    return out


def from_dict(data: dict | None) -> RunConfig:
    problems: list[str] = []
    cfg = _build(RunConfig, data or {}, "", problems)
    # which keys the user set, so recipes can keep their own defaults for the rest
    cfg.explicit_keys = frozenset(_dotted_keys(data))
    if not problems:
        _check_values(cfg, problems)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def load_config(path: str | Path | None = None, overrides=None) -> RunConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = load_yaml(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    return from_dict(apply_overrides(data, overrides))
