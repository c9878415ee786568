"""Procedural face-like identities and their 2-D pose-varied rasterisation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

PALETTE = ("background", "skin", "hair", "left-eye", "right-eye", "nose", "mouth")
BACKGROUND, SKIN, HAIR, LEFT_EYE, RIGHT_EYE, NOSE, MOUTH = range(len(PALETTE))

YAW_RANGE = (-60.0, 60.0)
PITCH_RANGE = (-30.0, 30.0)
ILLUMINATION_RANGE = (0.6, 1.4)
N_BACKGROUNDS = 8

# Quantised geometric attributes: (name, levels). Distinct identity codes differ
# by at least one full level step in at least one of these.
GEOMETRY_LEVELS: tuple[tuple[str, tuple[float, ...]], ...] = (
    ("eye_spacing", (20.0, 26.0, 32.0, 38.0)),   # degrees either side of the midline
    ("eye_height", (-20.0, -14.0, -8.0)) ,        # vertical angle, negative is up
    ("eye_size", (0.13, 0.16, 0.19)),            # horizontal semi-axis, head-relative
    ("nose_size", (0.08, 0.11, 0.14)),
    ("mouth_width", (16.0, 24.0, 32.0)),          # angular half-width, degrees
    ("hair_extent", (-56.0, -46.0, -36.0)),       # hairline vertical angle
    ("head_width", (0.60, 0.66, 0.72)),           # semi-axis as a fraction of the half-image
    ("head_aspect", (1.12, 1.22, 1.32)),
)
_RADICES = tuple(len(levels) for _, levels in GEOMETRY_LEVELS)
CODE_SPACE = math.prod(_RADICES)
JITTER = 0.2  # uniform jitter, in level steps
MIN_SEPARATION = 1.0 - 2 * JITTER

# base colours stay below 1/1.4 so illumination scaling never clips
MAX_BASE = 1.0 / ILLUMINATION_RANGE[1]
SKIN_TONES = ((0.62, 0.48, 0.40), (0.55, 0.40, 0.30), (0.45, 0.32, 0.24), (0.66, 0.55, 0.47))
HAIR_COLOURS = ((0.10, 0.08, 0.06), (0.35, 0.22, 0.10), (0.60, 0.50, 0.25), (0.40, 0.40, 0.40),
                (0.45, 0.15, 0.08))
EYE_COLOUR = (0.16, 0.18, 0.24)
MOUTH_COLOUR = (0.55, 0.20, 0.22)
FRAME_COLOUR = (0.05, 0.05, 0.05)
BACKGROUNDS = (
    ((0.20, 0.30, 0.55), None), ((0.55, 0.60, 0.35), None), ((0.30, 0.30, 0.30), (0.65, 0.65, 0.65)),
    ((0.60, 0.35, 0.30), None), ((0.15, 0.40, 0.35), (0.50, 0.65, 0.55)), ((0.68, 0.62, 0.50), None),
    ((0.40, 0.25, 0.50), (0.10, 0.10, 0.25)), ((0.25, 0.50, 0.65), (0.65, 0.60, 0.40)),
)
NOISE_SIGMA = 0.02


@dataclass(frozen=True)
class IdentityGenotype:
    index: int
    code: int
    eye_spacing: float
    eye_height: float
    eye_size: float
    nose_size: float
    mouth_width: float
    hair_extent: float
    head_width: float
    head_aspect: float
    skin_tone: int
    hair_colour: int
    spectacles: bool
    facial_hair: bool

    def geometry(self) -> dict[str, float]:
        return {name: getattr(self, name) for name, _ in GEOMETRY_LEVELS}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PoseParams:
    yaw: float = 0.0
    pitch: float = 0.0
    illumination: float = 1.0
    background: int = 0

    def __post_init__(self):
        if not YAW_RANGE[0] <= self.yaw <= YAW_RANGE[1]:
            raise ValueError(f"yaw {self.yaw} outside {YAW_RANGE}")
        if not PITCH_RANGE[0] <= self.pitch <= PITCH_RANGE[1]:
            raise ValueError(f"pitch {self.pitch} outside {PITCH_RANGE}")
        if not ILLUMINATION_RANGE[0] <= self.illumination <= ILLUMINATION_RANGE[1]:
            raise ValueError(f"illumination {self.illumination} outside {ILLUMINATION_RANGE}")
        if not 0 <= self.background < N_BACKGROUNDS:
            raise ValueError(f"background index {self.background} outside 0..{N_BACKGROUNDS - 1}")


@dataclass
class Sample:
    image: np.ndarray       # float32 [H, W, 3] in [0, 1]
    mask: np.ndarray        # uint8 [H, W], values index PALETTE
    identity: int
    pose: PoseParams
    view: int = 0


def _code_for(dataset_seed: int, index: int) -> int:
    # seeded affine bijection on the code space: distinct indices get distinct codes
    rng = np.random.default_rng([dataset_seed, 0x5EED])
    while True:
        a = int(rng.integers(1, CODE_SPACE))
        if math.gcd(a, CODE_SPACE) == 1:
            break
    b = int(rng.integers(0, CODE_SPACE))
    return (a * index + b) % CODE_SPACE


def sample_identity(dataset_seed: int, index: int) -> IdentityGenotype:
    """Genotype for identity ``index``; a pure function of ``(dataset_seed, index)``.

    Indices below ``CODE_SPACE`` map to distinct level codes, so any two
    such identities differ by at least ``MIN_SEPARATION`` level steps in
    some geometric attribute.
    """
    if index < 0:
        raise ValueError(f"identity index must be >= 0, got {index}")
    code = _code_for(dataset_seed, index)
    rng = np.random.default_rng([dataset_seed, index, 1])
    attrs: dict[str, float] = {}
    rem = code
    for (name, levels), radix in zip(GEOMETRY_LEVELS, _RADICES):
        level = rem % radix
        rem //= radix
        step = levels[1] - levels[0]
        attrs[name] = float(levels[level] + rng.uniform(-JITTER, JITTER) * step)
    return IdentityGenotype(
        index=index,
        code=code,
        skin_tone=int(rng.integers(len(SKIN_TONES))),
        hair_colour=int(rng.integers(len(HAIR_COLOURS))),
        spectacles=bool(rng.random() < 0.25),
        facial_hair=bool(rng.random() < 0.25),
        **attrs,
    )


def genotype_separation(a: IdentityGenotype, b: IdentityGenotype) -> float:
    """Largest per-attribute difference between two genotypes, in level steps."""
    return max(
        abs(getattr(a, name) - getattr(b, name)) / (levels[1] - levels[0])
        for name, levels in GEOMETRY_LEVELS
    )


def _sin(deg: float) -> float:
    return math.sin(math.radians(deg))


def _cos(deg: float) -> float:
    return math.cos(math.radians(deg))


def render(genotype: IdentityGenotype, pose: PoseParams, resolution: int,
           noise_seed: int | None = None) -> Sample:
    """Rasterise one view of ``genotype``.

    Pose is simulated in 2-D: a feature at horizontal angle ``t`` on the
    head projects to ``head_width * sin(t - yaw)`` and is foreshortened by
    ``cos(t - yaw)``; pitch acts the same way vertically. Eye centres are
    snapped to pixel centres, so an eye's pixel set only shrinks as its
    foreshortening grows. Illumination scales the image, never the mask.
    """
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    g, R = genotype, resolution
    half = R / 2.0
    centres = np.arange(R) + 0.5
    u = ((centres - half) / half)[None, :]          # horizontal, left -> right
    v = ((centres - half) / half)[:, None]          # vertical, top -> bottom
    yaw, pitch = pose.yaw, pose.pitch

    rx = g.head_width
    ry = g.head_width * g.head_aspect * 0.75
    vc = 0.06

    def hpos(theta):
        return rx * _sin(theta - yaw)

    def vpos(phi):
        return vc + ry * _sin(phi + pitch)

    mask = np.full((R, R), BACKGROUND, dtype=np.uint8)
    colour = np.zeros((R, R, 3), dtype=np.float64)

    bg_top, bg_bottom = BACKGROUNDS[pose.background]
    if bg_bottom is None:
        colour[:] = bg_top
    else:
        w = ((centres / R)[:, None, None])
        colour[:] = (1 - w) * np.array(bg_top) + w * np.array(bg_bottom)

    def paint(region, cls, rgb):
        mask[region] = cls
        colour[region] = rgb

    # skin: head ellipse
    head = (u / rx) ** 2 + ((v - vc) / ry) ** 2 <= 1.0
    skin_rgb = np.array(SKIN_TONES[g.skin_tone])
    hair_rgb = np.array(HAIR_COLOURS[g.hair_colour])
    paint(head, SKIN, skin_rgb)

    # hair: cap above the hairline, plus the back of the head exposed by yaw
    volume = (u / (rx * 1.12)) ** 2 + ((v - vc) / (ry * 1.1)) ** 2 <= 1.0
    hairline = vpos(g.hair_extent)
    left_edge = rx * _sin(max(-80.0 - yaw, -90.0))
    right_edge = rx * _sin(min(80.0 - yaw, 90.0))
    back = head & ((u < left_edge) | (u > right_edge))
    paint((volume & (v < hairline)) | back, HAIR, hair_rgb)

    # eyes (left eye = image left); hidden once turned past 90 degrees
    eye_v = vpos(g.eye_height)
    eye_b = g.eye_size * 0.55 * _cos(g.eye_height + pitch)
    eye_bottom = eye_v + eye_b
    eyes = []
    for cls, theta in ((LEFT_EYE, -g.eye_spacing), (RIGHT_EYE, g.eye_spacing)):
        fore = _cos(theta - yaw)
        if fore <= 0:
            continue
        a_px = g.eye_size * fore * half
        b_px = eye_b * half
        cx = math.floor((hpos(theta) + 1.0) * half) + 0.5
        cy = math.floor((eye_v + 1.0) * half) + 0.5
        xs = centres[None, :] - cx
        ys = centres[:, None] - cy
        region = (xs / a_px) ** 2 + (ys / b_px) ** 2 <= 1.0 if a_px > 0 else np.zeros((R, R), bool)
        eyes.append((cx, cy, a_px, b_px))
        paint(region, cls, EYE_COLOUR)

    # facial hair sits on the lower face, under the mouth layer
    mouth_phi = 34.0
    mouth_v = vpos(mouth_phi)
    if g.facial_hair:
        beard = head & (v > mouth_v - 0.04) & (u > left_edge) & (u < right_edge)
        paint(beard, HAIR, hair_rgb)

    # nose: protrudes, so it shifts a little further than the face surface;
    # kept strictly below the eyes
    nose_phi = 12.0
    nu = rx * 1.15 * _sin(-yaw)
    nv = vpos(nose_phi)
    na = g.nose_size * (0.6 + 0.4 * _cos(yaw))
    nb = g.nose_size * 1.3 * _cos(nose_phi + pitch)
    nose = ((u - nu) / na) ** 2 + ((v - nv) / nb) ** 2 <= 1.0
    nose &= v > eye_bottom + 1.0 / half
    paint(nose, NOSE, skin_rgb * 0.8)

    # mouth spans the angular interval +-mouth_width around the midline
    lo, hi = hpos(-g.mouth_width), hpos(g.mouth_width)
    mu, ma = (lo + hi) / 2.0, max((hi - lo) / 2.0, 1e-6)
    mb = 0.07 * _cos(mouth_phi + pitch)
    mouth = ((u - mu) / ma) ** 2 + ((v - mouth_v) / mb) ** 2 <= 1.0
    paint(mouth, MOUTH, MOUTH_COLOUR)

    # spectacles change the image only
    if g.spectacles:
        px = centres[None, :]
        py = centres[:, None]
        for cx, cy, a_px, b_px in eyes:
            ring = ((px - cx) / (a_px * 1.5 + 1.5)) ** 2 + ((py - cy) / (b_px * 2.0 + 1.5)) ** 2
            colour[(ring > 1.0) & (ring <= 1.45)] = FRAME_COLOUR

    if noise_seed is not None:
        noise = np.random.default_rng(noise_seed).normal(0.0, NOISE_SIGMA, size=colour.shape)
        colour = colour + noise
    colour = np.clip(colour, 0.0, MAX_BASE)
    image = (colour * pose.illumination).astype(np.float32)
    return Sample(image=image, mask=mask, identity=g.index, pose=pose)
