"""Experiment configuration: YAML schema, presets and validation.

Example::

    dataset:
      identities: 20
      views: 40
      resolution: 48
    train:
      max_epochs: 40
      patience: 20
    arms:
      - name: baseline-ID
        kind: id
        encoder: desk
      - name: Seg-Distilled-ID
        kind: joint
        encoder: desk

``dataset.seed`` pins the dataset; when omitted it follows the run seed.
``encoder`` is a preset name or a mapping with ``preset`` and/or explicit
fields (``stem_channels``, ``stem_stride``, ``stages`` as ``[t, c, n, s]``
rows, ``width_multiplier``, ``last_channels``, ``kind``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from ..models import (
    EncoderConfig,
    StageSpec,
    full_encoder_config,
    toy_encoder_config,
)
from ..models.networks import ENCODER_KINDS
from ..synthfaces import PALETTE
from ..training import LossWeights, TrainConfig

ARM_KINDS = ("id", "joint")
DESK_MAX_EPOCHS = 40


class ConfigError(ValueError):
    """Bad configuration; the CLI maps this to a usage exit code."""


def _stages(rows) -> tuple[StageSpec, ...]:
    return tuple(StageSpec(*r) for r in rows)


def desk_encoder_config() -> EncoderConfig:
    return EncoderConfig(stem_channels=8, stem_stride=2,
                         stages=_stages([(2, 8, 1, 1), (2, 16, 1, 2), (2, 24, 1, 2)]),
                         width_multiplier=2.0)


# Plain-convolution stand-ins for the large benchmark encoders.
ENCODER_PRESETS = {
    "desk": desk_encoder_config,
    "toy": toy_encoder_config,
    "mobilenetv2": full_encoder_config,
    "plain-deep": lambda: EncoderConfig(16, _stages([(1, 16, 2, 1), (1, 32, 3, 2), (1, 48, 3, 2)]),
                                        kind="plain"),
    "plain-wide": lambda: EncoderConfig(24, _stages([(1, 32, 1, 1), (1, 64, 1, 2), (1, 96, 1, 2)]),
                                        kind="plain"),
    "plain-narrow": lambda: EncoderConfig(12, _stages([(1, 16, 1, 1), (1, 24, 2, 2), (1, 32, 2, 2)]),
                                          kind="plain"),
}


@dataclass(frozen=True)
class DatasetSpec:
    identities: int = 20
    views: int = 40
    resolution: int = 48
    seed: int | None = None

    def __post_init__(self):
        if self.identities < 2:
            raise ConfigError(f"identities must be >= 2, got {self.identities}")
        if self.views < 10:
            raise ConfigError(f"views must be >= 10, got {self.views}")
        if self.resolution < 8:
            raise ConfigError(f"resolution must be >= 8, got {self.resolution}")


@dataclass(frozen=True)
class ArmSpec:
    name: str
    kind: str
    encoder: EncoderConfig
    head_width: int = 64
    decoder_width: int | None = 16
    seg_classes: int = len(PALETTE)
    train: TrainConfig = TrainConfig(max_epochs=DESK_MAX_EPOCHS)

    def __post_init__(self):
        if self.kind not in ARM_KINDS:
            raise ConfigError(f"arm {self.name!r}: kind must be one of {ARM_KINDS}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    arms: tuple[ArmSpec, ...]
    seeds: tuple[int, ...] | None = None
    source: str = "<builtin>"

    def __post_init__(self):
        names = [a.name for a in self.arms]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"arm names must be unique; repeated: {dupes}")
        if not self.arms:
            raise ConfigError("config defines no arms")

    def arm(self, name: str) -> ArmSpec:
        for a in self.arms:
            if a.name == name:
                return a
        raise ConfigError(f"no arm named {name!r}; available: {[a.name for a in self.arms]}")

    def with_overrides(self, **train_overrides) -> "ExperimentConfig":
        arms = tuple(replace(a, train=replace(a.train, **train_overrides)) for a in self.arms)
        return replace(self, arms=arms)


def desk_config() -> ExperimentConfig:
    enc = desk_encoder_config()
    return ExperimentConfig(
        DatasetSpec(20, 40, 48),
        (ArmSpec("baseline-ID", "id", enc), ArmSpec("Seg-Distilled-ID", "joint", enc)),
    )


def reference_arms_config() -> ExperimentConfig:
    """Desk-scale run carrying the benchmark table's row names."""
    desk = desk_encoder_config()
    return ExperimentConfig(
        DatasetSpec(20, 40, 48),
        (
            ArmSpec("MobileNetV2-ID", "id", desk),
            ArmSpec("ResNet-101-ID", "id", ENCODER_PRESETS["plain-deep"]()),
            ArmSpec("VGG-19-ID", "id", ENCODER_PRESETS["plain-wide"]()),
            ArmSpec("InceptionV3-ID", "id", ENCODER_PRESETS["plain-narrow"]()),
            ArmSpec("Seg-Distilled-ID", "joint", desk),
        ),
    )


PRESETS = {"desk": desk_config, "reference-arms": reference_arms_config}


# -- YAML loading with line context ------------------------------------------------

class _Src:
    def __init__(self, path: str, text: str):
        self.path, self.lines = path, text.splitlines()

    def error(self, node, msg: str) -> ConfigError:
        line = node.start_mark.line
        ctx = self.lines[line].rstrip() if line < len(self.lines) else ""
        return ConfigError(f"{self.path}:{line + 1}: {msg}\n    {ctx}")


_TYPE_NAMES = {int: "an integer", float: "a number", str: "a string"}


def _scalar(src: _Src, node, kind, what: str):
    if not isinstance(node, yaml.ScalarNode):
        raise src.error(node, f"{what} must be {_TYPE_NAMES[kind]}")
    if kind is str:
        return node.value
    value = node.value if node.tag.endswith(":str") else yaml.safe_load(node.value)
    if kind is float and type(value) is int:
        value = float(value)
    if type(value) is not kind:
        raise src.error(node, f"{what} must be {_TYPE_NAMES[kind]}, got {node.value!r}")
    return value


def _mapping(src: _Src, node, allowed: dict, what: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise src.error(node, f"{what} must be a mapping")
    out = {}
    for knode, vnode in node.value:
        key = knode.value
        if key not in allowed:
            raise src.error(knode, f"unknown key {key!r} in {what}; expected one of {sorted(allowed)}")
        if key in out:
            raise src.error(knode, f"duplicate key {key!r} in {what}")
        conv = allowed[key]
        if isinstance(conv, type):
            out[key] = _scalar(src, vnode, conv, f"{what}.{key}")
        else:
            out[key] = conv(src, vnode, f"{what}.{key}")
    return out


def _weights(src, node, what):
    d = _mapping(src, node, {"lambda_seg": float, "lambda_id": float}, what)
    try:
        return LossWeights(**d)
    except ValueError as e:
        raise src.error(node, str(e)) from None


_TRAIN_KEYS = {"max_epochs": int, "patience": int, "batch_size": int, "lr": float, "monitor": str,
               "loss_weights": _weights}


def _train(src, node, what, base: TrainConfig | None = None) -> TrainConfig:
    d = _mapping(src, node, _TRAIN_KEYS, what)
    try:
        return replace(base or TrainConfig(max_epochs=DESK_MAX_EPOCHS), **d)
    except ValueError as e:
        raise src.error(node, str(e)) from None


def _stage_rows(src, node, what):
    if not isinstance(node, yaml.SequenceNode) or not node.value:
        raise src.error(node, f"{what} must be a non-empty list of [t, c, n, s] rows")
    rows = []
    for i, row in enumerate(node.value):
        if not isinstance(row, yaml.SequenceNode) or len(row.value) != 4:
            raise src.error(row, f"{what}[{i}] must be [expansion, channels, repeats, stride]")
        rows.append(StageSpec(*(_scalar(src, v, int, f"{what}[{i}]") for v in row.value)))
    return tuple(rows)


def _encoder(src, node, what) -> EncoderConfig:
    if isinstance(node, yaml.ScalarNode):
        name = node.value
        if name not in ENCODER_PRESETS:
            raise src.error(node, f"unknown encoder preset {name!r}; expected one of {sorted(ENCODER_PRESETS)}")
        return ENCODER_PRESETS[name]()
    d = _mapping(src, node, {"preset": str, "stem_channels": int, "stem_stride": int,
                             "stages": _stage_rows, "width_multiplier": float,
                             "last_channels": int, "kind": str}, what)
    preset = d.pop("preset", None)
    if preset is not None and preset not in ENCODER_PRESETS:
        raise src.error(node, f"unknown encoder preset {preset!r}")
    if "kind" in d and d["kind"] not in ENCODER_KINDS:
        raise src.error(node, f"{what}.kind must be one of {ENCODER_KINDS}")
    try:
        if preset is not None:
            return replace(ENCODER_PRESETS[preset](), **d)
        return EncoderConfig(**d)
    except (TypeError, ValueError) as e:
        raise src.error(node, f"invalid encoder: {e}") from None


def _arm(src, node, what, train_base: TrainConfig) -> ArmSpec:
    d = _mapping(src, node, {"name": str, "kind": str, "encoder": _encoder, "head_width": int,
                             "decoder_width": int, "train": lambda s, n, w: n,
                             "loss_weights": _weights}, what)
    for key in ("name", "kind"):
        if key not in d:
            raise src.error(node, f"{what} is missing {key!r}")
    train = _train(src, d.pop("train"), f"{what}.train", train_base) if "train" in d else train_base
    if "loss_weights" in d:
        train = replace(train, loss_weights=d.pop("loss_weights"))
    d.setdefault("encoder", desk_encoder_config())
    try:
        return ArmSpec(train=train, **d)
    except ValueError as e:
        raise src.error(node, str(e)) from None


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    src = _Src(path, text)
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else path
        raise ConfigError(f"{where}: YAML syntax error: {getattr(e, 'problem', e)}") from None
    if root is None:
        raise ConfigError(f"{path}: config is empty")
    top = _mapping(src, root, {"dataset": lambda s, n, w: n, "train": lambda s, n, w: n,
                               "arms": lambda s, n, w: n, "seeds": lambda s, n, w: n}, "config")
    dataset = DatasetSpec()
    if "dataset" in top:
        dd = _mapping(src, top["dataset"], {"identities": int, "views": int, "resolution": int,
                                            "seed": int}, "dataset")
        try:
            dataset = DatasetSpec(**dd)
        except ConfigError as e:
            raise src.error(top["dataset"], str(e)) from None
    train = _train(src, top["train"], "train") if "train" in top else TrainConfig(max_epochs=DESK_MAX_EPOCHS)
    if "arms" not in top:
        raise src.error(root, "config needs an 'arms' list")
    arms_node = top["arms"]
    if not isinstance(arms_node, yaml.SequenceNode):
        raise src.error(arms_node, "arms must be a list")
    arms = tuple(_arm(src, n, f"arms[{i}]", train) for i, n in enumerate(arms_node.value))
    seeds = None
    if "seeds" in top:
        sn = top["seeds"]
        if not isinstance(sn, yaml.SequenceNode) or not sn.value:
            raise src.error(sn, "seeds must be a non-empty list of integers")
        seeds = tuple(_scalar(src, v, int, "seeds[]") for v in sn.value)
    try:
        return ExperimentConfig(dataset, arms, seeds, path)
    except ConfigError as e:
        raise src.error(arms_node, str(e)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, str(path))
