"""Encoder / decoder / ID-head construction, joint assembly and teacher pruning."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor
from .layers import ConvUnit, Dense, InvertedResidual, Module, TransposeUnit

ENCODER_KINDS = ("mobilenetv2", "plain")


class ConfigError(ValueError):
    pass


class NoDecoderError(ValueError):
    """Raised when a teacher branch is requested from a network without one."""


@dataclass(frozen=True)
class StageSpec:
    expansion: int
    channels: int
    repeats: int
    stride: int


@dataclass(frozen=True)
class EncoderConfig:
    stem_channels: int
    stages: tuple[StageSpec, ...]
    stem_stride: int = 2
    width_multiplier: float = 1.0
    last_channels: int = 0
    kind: str = "mobilenetv2"

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.stem_stride not in (1, 2) or any(s.stride not in (1, 2) for s in self.stages):
            raise ConfigError("encoder strides must be 1 or 2")
        if self.stem_channels < 1 or any(s.channels < 1 or s.repeats < 1 for s in self.stages):
            raise ConfigError("encoder channels and repeats must be >= 1")
        if self.width_multiplier <= 0:
            raise ConfigError("width multiplier must be positive")

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_multiplier)))

    @property
    def downsamplings(self) -> int:
        return int(self.stem_stride == 2) + sum(1 for s in self.stages if s.stride == 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["stages"] = tuple(StageSpec(**s) for s in d["stages"])
        return cls(**d)


@dataclass(frozen=True)
class DecoderStage:
    channels: int
    skip: Optional[int]  # index into the encoder taps, or None


@dataclass(frozen=True)
class DecoderConfig:
    stages: tuple[DecoderStage, ...]
    seg_classes: int = 7

    def to_dict(self) -> dict:
        return {"stages": [asdict(s) for s in self.stages], "seg_classes": self.seg_classes}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(tuple(DecoderStage(**s) for s in d["stages"]), d["seg_classes"])


@dataclass(frozen=True)
class IdHeadConfig:
    classes: int = 67
    feature_width: int = 128

    def __post_init__(self):
        if self.feature_width < 1:
            raise ConfigError("feature width must be >= 1")
        if self.classes < 2:
            raise ConfigError("identity class count must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IdHeadConfig":
        return cls(**d)


# -- components ----------------------------------------------------------------

@dataclass
class EncoderOutput:
    taps: list[Tensor]
    bottleneck: Tensor
    features: Tensor


@dataclass(frozen=True)
class TapInfo:
    resolution: int
    channels: int


class Encoder(Module):
    """Stem conv, stacked stages, optional final 1x1 conv.

    The feature map in front of every stride-2 step (other than the raw
    input) is exposed as a skip tap, ordered from high to low resolution.
    """

    def __init__(self, cfg: EncoderConfig, input_resolution: int, rng: np.random.Generator,
                 in_channels: int = 3, name: str = "encoder"):
        super().__init__(name)
        d = cfg.downsamplings
        if input_resolution % (2 ** d):
            raise ConfigError(
                f"input resolution {input_resolution} is not divisible by 2^{d} "
                f"(encoder has {d} stride-2 steps)"
            )
        self.cfg = cfg
        self.input_resolution = input_resolution
        self.blocks: list[tuple[bool, Module]] = []
        res = input_resolution
        stem_c = cfg.scaled(cfg.stem_channels)
        self.stem = self.add_child(
            ConvUnit(f"{name}.stem", rng, in_channels, stem_c, kernel=3, stride=cfg.stem_stride,
                     act="relu6" if cfg.kind == "mobilenetv2" else "relu")
        )
        res //= cfg.stem_stride
        taps: list[TapInfo] = []
        c = stem_c
        for si, st in enumerate(cfg.stages):
            cout = cfg.scaled(st.channels)
            for r in range(st.repeats):
                stride = st.stride if r == 0 else 1
                tap = stride == 2
                if tap:
                    taps.append(TapInfo(res, c))
                bname = f"{name}.s{si}b{r}"
                if cfg.kind == "mobilenetv2":
                    block = InvertedResidual(bname, rng, c, cout, st.expansion, stride)
                else:
                    block = ConvUnit(bname, rng, c, cout, kernel=3, stride=stride, act="relu")
                self.blocks.append((tap, self.add_child(block)))
                c = cout
                res //= stride
        self.tap_info = taps
        self.bottleneck_channels = c
        self.bottleneck_resolution = res
        self.last = None
        if cfg.last_channels:
            last_c = cfg.scaled(cfg.last_channels)
            self.last = self.add_child(ConvUnit(f"{name}.last", rng, c, last_c, kernel=1, act="relu6"))
            c = last_c
        self.out_channels = c

    def __call__(self, x: Tensor, training: bool = False) -> EncoderOutput:
        n, h, w, _ = x.shape
        if h != self.input_resolution or w != self.input_resolution:
            raise ShapeError(
                f"encoder built for {self.input_resolution}x{self.input_resolution} input, got {h}x{w}"
            )
        y = self.stem(x, training)
        taps = []
        for is_tap, block in self.blocks:
            if is_tap:
                taps.append(y)
            y = block(y, training)
        bottleneck = y
        features = self.last(y, training) if self.last is not None else y
        return EncoderOutput(taps, bottleneck, features)


class Decoder(Module):
    """U-Net style upsampling path ending in a per-pixel softmax."""

    def __init__(self, cfg: DecoderConfig, encoder: Encoder, rng: np.random.Generator,
                 name: str = "decoder"):
        super().__init__(name)
        d = encoder.cfg.downsamplings
        if len(cfg.stages) != d:
            raise ConfigError(
                f"decoder has {len(cfg.stages)} upsampling stages but encoder has {d} downsamplings"
            )
        if cfg.seg_classes < 2:
            raise ConfigError("segmentation class count must be >= 2")
        self.cfg = cfg
        self.ups: list[TransposeUnit] = []
        self.convs: list[ConvUnit] = []
        res = encoder.bottleneck_resolution
        c = encoder.bottleneck_channels
        for i, st in enumerate(cfg.stages):
            res *= 2
            skip_c = 0
            if st.skip is not None:
                if not 0 <= st.skip < len(encoder.tap_info):
                    raise ConfigError(
                        f"decoder stage {i} skips to tap {st.skip}, encoder has {len(encoder.tap_info)} taps"
                    )
                tap = encoder.tap_info[st.skip]
                if tap.resolution != res:
                    raise ConfigError(
                        f"decoder stage {i} outputs {res}x{res} but tap {st.skip} is "
                        f"{tap.resolution}x{tap.resolution}"
                    )
                skip_c = tap.channels
            self.ups.append(self.add_child(TransposeUnit(f"{name}.up{i}", rng, c, st.channels)))
            self.convs.append(self.add_child(
                ConvUnit(f"{name}.conv{i}", rng, st.channels + skip_c, st.channels, kernel=3, act="relu")
            ))
            c = st.channels
        self.classifier = self.add_child(
            ConvUnit(f"{name}.classifier", rng, c, cfg.seg_classes, kernel=1, act="linear", bn=False)
        )
        self.output_resolution = res

    def __call__(self, enc: EncoderOutput, training: bool = False) -> Tensor:
        y = enc.bottleneck
        for st, up, conv in zip(self.cfg.stages, self.ups, self.convs):
            y = up(y, training)
            if st.skip is not None:
                y = ops.concat_channels(y, enc.taps[st.skip])
            y = conv(y, training)
        return ops.softmax(self.classifier(y, training))


class IdHead(Module):
    """Global average pool -> dense feature layer (relu) -> dense classifier."""

    def __init__(self, cfg: IdHeadConfig, in_channels: int, rng: np.random.Generator, name: str = "head"):
        super().__init__(name)
        self.cfg = cfg
        self.feature = self.add_child(Dense(f"{name}.feature", rng, in_channels, cfg.feature_width))
        self.classifier = self.add_child(Dense(f"{name}.classifier", rng, cfg.feature_width, cfg.classes))

    def logits(self, features: Tensor) -> Tensor:
        h = ops.activation(self.feature(ops.global_avg_pool(features)), "relu")
        return self.classifier(h)

    def __call__(self, features: Tensor) -> Tensor:
        return ops.softmax(self.logits(features))


# -- networks ------------------------------------------------------------------

class _Network:
    kind: str
    encoder: Encoder
    head: IdHead

    @property
    def components(self) -> dict[str, Module]:
        raise NotImplementedError

    @property
    def input_resolution(self) -> int:
        return self.encoder.input_resolution

    @property
    def id_classes(self) -> int:
        return self.head.cfg.classes

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for comp in self.components.values():
            out.update(comp.named_parameters())
        return out

    def named_buffers(self) -> dict[str, ops.RunningStats]:
        out: dict[str, ops.RunningStats] = {}
        for comp in self.components.values():
            out.update(comp.named_buffers())
        return out

    def id_logits(self, x: Tensor, training: bool = False) -> Tensor:
        return self.head.logits(self.encoder(x, training).features)

    def forward_id(self, x: Tensor, training: bool = False) -> Tensor:
        return self.head(self.encoder(x, training).features)

    def topology(self) -> dict:
        return {
            "kind": self.kind,
            "input_resolution": self.input_resolution,
            "input_channels": self.in_channels,
            "encoder": self.encoder.cfg.to_dict(),
            "decoder": self.decoder.cfg.to_dict() if self.kind == "joint" else None,
            "head": self.head.cfg.to_dict(),
        }


class IdNetwork(_Network):
    """Encoder + ID head: the inference graph, also used for ID-only training arms."""

    kind = "id"

    def __init__(self, encoder: Encoder, head: IdHead, in_channels: int = 3):
        self.encoder = encoder
        self.head = head
        self.in_channels = in_channels

    @property
    def components(self) -> dict[str, Module]:
        return {"encoder": self.encoder, "head": self.head}

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward_id(x, training)


PrunedNetwork = IdNetwork


class JointNetwork(_Network):
    """Shared encoder feeding the ID head and the segmentation (teacher) decoder."""

    kind = "joint"

    def __init__(self, encoder: Encoder, decoder: Decoder, head: IdHead, in_channels: int = 3):
        self.encoder = encoder
        self.decoder = decoder
        self.head = head
        self.in_channels = in_channels

    @property
    def components(self) -> dict[str, Module]:
        return {"encoder": self.encoder, "decoder": self.decoder, "head": self.head}

    def forward(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        """Return ``(Y_ID, Y_Seg)`` probabilities from one encoder pass."""
        enc = self.encoder(x, training)
        return self.head(enc.features), self.decoder(enc, training)


def _rngs(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def build_encoder(cfg: EncoderConfig, input_resolution: int, seed: int = 0,
                  rng: np.random.Generator | None = None, in_channels: int = 3) -> Encoder:
    return Encoder(cfg, input_resolution, rng if rng is not None else _rngs(seed)[0], in_channels)


def build_decoder(cfg: DecoderConfig, encoder: Encoder, seed: int = 0,
                  rng: np.random.Generator | None = None) -> Decoder:
    return Decoder(cfg, encoder, rng if rng is not None else _rngs(seed)[1])


def build_id_head(cfg: IdHeadConfig, encoder: Encoder, seed: int = 0,
                  rng: np.random.Generator | None = None) -> IdHead:
    return IdHead(cfg, encoder.out_channels, rng if rng is not None else _rngs(seed)[2])


def assemble_joint(encoder: Encoder, decoder: Decoder, head: IdHead) -> JointNetwork:
    if decoder.output_resolution != encoder.input_resolution:
        raise ConfigError(
            f"decoder output {decoder.output_resolution} != encoder input {encoder.input_resolution}"
        )
    if head.feature.weights.shape[0] != encoder.out_channels:
        raise ConfigError(
            f"head expects {head.feature.weights.shape[0]} channels, encoder emits {encoder.out_channels}"
        )
    if len(decoder.ups) != encoder.cfg.downsamplings:
        raise ConfigError("decoder was built against a different encoder")
    return JointNetwork(encoder, decoder, head)


def default_decoder(encoder_cfg: EncoderConfig, input_resolution: int, seg_classes: int = 7,
                    base_width: int | None = None, min_width: int = 4) -> DecoderConfig:
    """One upsampling stage per downsampling; widths halve from ``base_width``.

    ``base_width`` defaults to the encoder's bottleneck width. Each stage
    concatenates the tap at its output resolution when there is one.
    """
    probe = Encoder(encoder_cfg, input_resolution, np.random.default_rng(0))
    width = base_width if base_width is not None else probe.bottleneck_channels
    by_res = {t.resolution: i for i, t in enumerate(probe.tap_info)}
    res = probe.bottleneck_resolution
    stages = []
    for _ in range(encoder_cfg.downsamplings):
        res *= 2
        stages.append(DecoderStage(max(min_width, width), by_res.get(res)))
        width //= 2
    return DecoderConfig(tuple(stages), seg_classes)


def build_joint(encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig, head_cfg: IdHeadConfig,
                input_resolution: int, seed: int = 0) -> JointNetwork:
    r_enc, r_dec, r_head = _rngs(seed)
    enc = build_encoder(encoder_cfg, input_resolution, rng=r_enc)
    dec = build_decoder(decoder_cfg, enc, rng=r_dec)
    head = build_id_head(head_cfg, enc, rng=r_head)
    return assemble_joint(enc, dec, head)


def build_id_network(encoder_cfg: EncoderConfig, head_cfg: IdHeadConfig, input_resolution: int,
                     seed: int = 0) -> IdNetwork:
    """Encoder + head only. Same seed gives the same initial weights as :func:`build_joint`."""
    r_enc, _, r_head = _rngs(seed)
    enc = build_encoder(encoder_cfg, input_resolution, rng=r_enc)
    return IdNetwork(enc, build_id_head(head_cfg, enc, rng=r_head))


def build_from_topology(topo: dict, seed: int = 0):
    enc_cfg = EncoderConfig.from_dict(topo["encoder"])
    head_cfg = IdHeadConfig.from_dict(topo["head"])
    res = topo["input_resolution"]
    if topo["kind"] == "joint":
        return build_joint(enc_cfg, DecoderConfig.from_dict(topo["decoder"]), head_cfg, res, seed)
    if topo["kind"] == "id":
        return build_id_network(enc_cfg, head_cfg, res, seed)
    raise ConfigError(f"unknown network kind {topo['kind']!r}")


def prune_teacher(net: JointNetwork) -> IdNetwork:
    """Drop the segmentation decoder, keeping independent copies of the ID path."""
    if not isinstance(net, JointNetwork):
        raise NoDecoderError("network has no segmentation decoder to remove")
    return IdNetwork(copy.deepcopy(net.encoder), copy.deepcopy(net.head), net.in_channels)


def count_parameters(net_or_module, partition: bool = False):
    """Number of scalar trainable parameters (batch-norm running stats excluded)."""
    if isinstance(net_or_module, _Network):
        parts = {k: _count(m) for k, m in net_or_module.components.items()}
        parts.setdefault("decoder", 0)
        total = sum(parts.values())
        return {"total": total, **parts} if partition else total
    return _count(net_or_module)


def _count(module: Module) -> int:
    return sum(t.size for t in module.named_parameters().values())


# -- reference configurations ----------------------------------------------------

def toy_encoder_config(width_multiplier: float = 1.0) -> EncoderConfig:
    return EncoderConfig(
        stem_channels=8,
        stem_stride=1,
        stages=(StageSpec(2, 8, 1, 1), StageSpec(2, 16, 1, 2), StageSpec(2, 24, 1, 2)),
        width_multiplier=width_multiplier,
    )


MOBILENETV2_STAGES = (
    StageSpec(1, 16, 1, 1),
    StageSpec(6, 24, 2, 2),
    StageSpec(6, 32, 3, 2),
    StageSpec(6, 64, 4, 2),
    StageSpec(6, 96, 3, 1),
    StageSpec(6, 160, 3, 2),
    StageSpec(6, 320, 1, 1),
)


def full_encoder_config() -> EncoderConfig:
    return EncoderConfig(stem_channels=32, stem_stride=2, stages=MOBILENETV2_STAGES, last_channels=1280)


FULL_RESOLUTION = 128
FULL_DECODER_BASE_WIDTH = 384


def full_decoder_config(seg_classes: int = 14) -> DecoderConfig:
    return default_decoder(full_encoder_config(), FULL_RESOLUTION, seg_classes,
                           base_width=FULL_DECODER_BASE_WIDTH)


def full_head_config() -> IdHeadConfig:
    return IdHeadConfig(classes=67, feature_width=128)


__all__ = [
    "ConfigError", "DecoderConfig", "DecoderStage", "Encoder", "EncoderConfig", "IdHead",
    "IdHeadConfig", "IdNetwork", "JointNetwork", "NoDecoderError", "PrunedNetwork", "StageSpec",
    "assemble_joint", "build_decoder", "build_encoder", "build_from_topology", "build_id_head",
    "build_id_network", "build_joint", "count_parameters", "default_decoder",
    "full_decoder_config", "full_encoder_config", "full_head_config", "prune_teacher",
    "toy_encoder_config",
]

