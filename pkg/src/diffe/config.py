"""TOML run configuration: sections, defaults, validation and echo.

A run file has up to five tables, ``[data]``, ``[preprocess]``, ``[model]``,
``[train]`` and ``[eval]``. Every key is optional. Unknown keys, wrong types
and out-of-range values are collected and reported together, each prefixed by
its ``section.key`` path.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .data import SyntheticConfig, class_frequency
from .errors import ConfigurationError
from .networks import DOWNSAMPLE, LATENT_DIM
from .sigproc import EDGE_LIMIT, HIGH_GAMMA, PreprocessConfig
from .training import MODES, ModelConfig, TrainConfig


@dataclass
class EvalConfig:
    checkpoint: str = "final"  # which saved state `eval` scores: "final" or "best"
    split: str = "test"  # "test" or "all"


@dataclass
class RunConfig:
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def train_config(self) -> TrainConfig:
        """The training config with the ``[model]`` table folded in."""
        return replace(self.train, model=self.model)

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["train"].pop("model")
        return out


SECTIONS = {
    "data": SyntheticConfig,
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


class ConfigValidationError(ConfigurationError):
    """Every problem found in a run config, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _coerce(path: str, value, default, problems: list[str]):
    """Match ``value`` to the type of ``default``; ints are accepted for floats."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    elif isinstance(default, tuple):
        if isinstance(value, list):
            inner = default[0] if default else 0.0
            items = [_coerce(f"{path}[{i}]", v, inner, problems) for i, v in enumerate(value)]
            return tuple(items)
    kind = type(default).__name__ if not isinstance(default, tuple) else "array"
    problems.append(f"{path}: expected {kind}, got {value!r}")
    return default


def _build(name: str, cls, table, problems: list[str]):
    if not isinstance(table, dict):
        problems.append(f"{name}: expected a table")
        return cls()
    defaults = cls()
    known = {f.name for f in fields(cls) if not (cls is TrainConfig and f.name == "model")}
    values = {}
    for key, value in table.items():
        if key not in known:
            problems.append(f"{name}.{key}: unknown key")
            continue
        values[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key), problems)
    return replace(defaults, **values)


def _check(cfg: RunConfig) -> list[str]:
    p: list[str] = []
    d, pre, m, tr, ev = cfg.data, cfg.preprocess, cfg.model, cfg.train, cfg.eval

    if d.per_class < 1:
        p.append("data.per_class: must be >= 1")
    if d.subjects < 1:
        p.append("data.subjects: must be >= 1")
    if d.classes != 13:
        p.append("data.classes: fixed at 13")
    if d.channels < 1:
        p.append("data.channels: must be >= 1")
    if d.fs <= 0:
        p.append("data.fs: must be > 0")
    elif class_frequency(d.classes - 2) > EDGE_LIMIT * d.fs / 2:
        p.append(f"data.fs: {d.fs:g} Hz cannot carry the {class_frequency(d.classes - 2):g} Hz class signature "
                 f"(Nyquist rule: frequencies must stay below {EDGE_LIMIT} x fs/2)")
    if d.spacing_s < d.epoch_s + pre.baseline_s:
        p.append(f"data.spacing_s: {d.spacing_s} s cannot hold a {d.epoch_s} s epoch plus baseline")
    if d.jitter_s < 0:
        p.append("data.jitter_s: must be >= 0")

    if d.fs > 0:
        nyq = d.fs / 2
        if not 0 < pre.bandpass_low < pre.bandpass_high:
            p.append("preprocess.bandpass_low: must satisfy 0 < bandpass_low < bandpass_high")
        if pre.bandpass_high > EDGE_LIMIT * nyq:
            p.append(f"preprocess.bandpass_high: {pre.bandpass_high:g} Hz exceeds {EDGE_LIMIT} x Nyquist "
                     f"({EDGE_LIMIT * nyq:g} Hz at fs={d.fs:g}) (Nyquist rule)")
        for i, f0 in enumerate(pre.notch_freqs):
            if not 0 < f0 < nyq:
                p.append(f"preprocess.notch_freqs[{i}]: {f0:g} Hz must lie in (0, fs/2={nyq:g})")
        if pre.use_high_gamma and EDGE_LIMIT * nyq <= HIGH_GAMMA[0]:
            p.append(f"preprocess.use_high_gamma: fs={d.fs:g} leaves no room above {HIGH_GAMMA[0]:g} Hz "
                     "(Nyquist rule)")
        n_epoch = int(round(pre.epoch_s * d.fs))
        if n_epoch < DOWNSAMPLE or n_epoch % DOWNSAMPLE:
            p.append(f"preprocess.epoch_s: {pre.epoch_s} s at fs={d.fs:g} gives {n_epoch} samples, "
                     f"which must be a positive multiple of {DOWNSAMPLE}")
    if pre.notch_q <= 0:
        p.append("preprocess.notch_q: must be > 0")
    if pre.epoch_s <= 0:
        p.append("preprocess.epoch_s: must be > 0")
    if pre.baseline_s < 0:
        p.append("preprocess.baseline_s: must be >= 0")

    for name in ("ddpm_widths", "encoder_widths", "decoder_widths"):
        widths = getattr(m, name)
        if len(widths) != 3:
            p.append(f"model.{name}: needs exactly 3 stage widths")
        for i, w in enumerate(widths):
            if w < 1 or w % m.groups:
                p.append(f"model.{name}[{i}]: {w} must be a positive multiple of model.groups={m.groups}")
    if m.encoder_widths and m.encoder_widths[-1] != LATENT_DIM:
        p.append(f"model.encoder_widths[2]: the latent width is fixed at {LATENT_DIM}")
    if m.groups < 1:
        p.append("model.groups: must be >= 1")
    if m.time_dim < 2 or m.time_dim % 2:
        p.append("model.time_dim: must be a positive even number")
    if m.classifier_hidden < 0:
        p.append("model.classifier_hidden: must be >= 0")

    if tr.alpha < 0:
        p.append("train.alpha: must be >= 0")
    if tr.epochs < 1:
        p.append("train.epochs: must be >= 1")
    if tr.batch_size < 1:
        p.append("train.batch_size: must be >= 1")
    if tr.eval_batch_size < 1:
        p.append("train.eval_batch_size: must be >= 1")
    if not 0 < tr.test_fraction < 1:
        p.append("train.test_fraction: must lie in (0, 1)")
    if not 0 < tr.base_lr <= tr.max_lr:
        p.append("train.base_lr: must satisfy 0 < base_lr <= max_lr")
    if tr.cycle_epochs < 1:
        p.append("train.cycle_epochs: must be >= 1")
    if not 0 < tr.rms_decay < 1:
        p.append("train.rms_decay: must lie in (0, 1)")
    if tr.rms_eps <= 0:
        p.append("train.rms_eps: must be > 0")
    if tr.T < 1:
        p.append("train.T: must be >= 1")
    if not 0 < tr.beta_start <= tr.beta_end < 1:
        p.append("train.beta_start: must satisfy 0 < beta_start <= beta_end < 1")
    if tr.ablation_mode not in MODES:
        p.append(f"train.ablation_mode: {tr.ablation_mode!r} is not one of {', '.join(MODES)}")

    if ev.checkpoint not in ("final", "best"):
        p.append(f"eval.checkpoint: {ev.checkpoint!r} is not one of final, best")
    if ev.split not in ("test", "all"):
        p.append(f"eval.split: {ev.split!r} is not one of test, all")
    return p


def from_dict(raw: dict) -> RunConfig:
    """Resolve defaults and validate; raises ConfigValidationError listing every problem."""
    problems: list[str] = []
    parts = {}
    for name, table in raw.items():
        if name not in SECTIONS:
            problems.append(f"{name}: unknown section")
            continue
        parts[name] = _build(name, SECTIONS[name], table, problems)
    cfg = RunConfig(**parts)
    # ill-typed keys fell back to defaults, so range checks still see a usable config
    problems += _check(cfg)
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def validate_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return from_dict(raw)


def dumps(cfg: RunConfig) -> str:
    """Render a config back to TOML (round-trips through ``from_dict``)."""
    lines = []
    for name, table in cfg.to_dict().items():
        lines.append(f"[{name}]")
        for key, value in table.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return "[" + ", ".join(_toml_value(x) for x in v) + "]"
