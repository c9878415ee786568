"""Dataset generation and the per-identity train/val/test split."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .render import (
    ILLUMINATION_RANGE,
    N_BACKGROUNDS,
    PALETTE,
    PITCH_RANGE,
    YAW_RANGE,
    PoseParams,
    render,
    sample_identity,
)

SPLITS = ("train", "val", "test")
TEST_FRACTION = 0.10
VAL_FRACTION = 0.20
MIN_SAMPLES_PER_IDENTITY = 10


class SplitError(ValueError):
    pass


@dataclass
class Dataset:
    """Stacked samples: ``images`` [N,H,W,3] float32, ``masks`` [N,H,W] uint8."""

    images: np.ndarray
    masks: np.ndarray
    identities: np.ndarray
    views: np.ndarray
    poses: list[PoseParams]
    identity_count: int
    resolution: int
    palette: tuple[str, ...] = PALETTE
    seed: int | None = None
    split: np.ndarray | None = None  # per-sample tag from SPLITS, if assigned

    def __len__(self) -> int:
        return len(self.identities)

    @property
    def sample_names(self) -> list[str]:
        return [sample_name(int(i), int(v)) for i, v in zip(self.identities, self.views)]

    def subset(self, which: str) -> "DataSplit":
        if self.split is None:
            raise SplitError("dataset has no split assignment")
        idx = np.flatnonzero(self.split == which)
        return DataSplit(which, self.images[idx], self.masks[idx], self.identities[idx])

    def splits(self) -> "DataSplits":
        return DataSplits(*(self.subset(s) for s in SPLITS),
                          identity_count=self.identity_count, seg_classes=len(self.palette))


@dataclass
class DataSplit:
    name: str
    images: np.ndarray
    masks: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class DataSplits:
    train: DataSplit
    val: DataSplit
    test: DataSplit
    identity_count: int = 0
    seg_classes: int = len(PALETTE)
    extras: dict = field(default_factory=dict)


def sample_name(identity: int, view: int) -> str:
    return f"{identity:04d}_{view:04d}"


def quantize(image: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels, the precision the on-disk format keeps."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def stratified_poses(dataset_seed: int, identity: int, views: int) -> list[PoseParams]:
    """Latin-hypercube yaw/pitch over their full ranges; illumination and background random."""
    rng = np.random.default_rng([dataset_seed, identity, 2])
    yaw_strata = (np.arange(views) + rng.random(views)) / views
    pitch_strata = (rng.permutation(views) + rng.random(views)) / views
    illum = rng.uniform(*ILLUMINATION_RANGE, size=views)
    bg = rng.integers(0, N_BACKGROUNDS, size=views)
    poses = []
    for k in range(views):
        yaw = YAW_RANGE[0] + (YAW_RANGE[1] - YAW_RANGE[0]) * yaw_strata[k]
        pitch = PITCH_RANGE[0] + (PITCH_RANGE[1] - PITCH_RANGE[0]) * pitch_strata[k]
        poses.append(PoseParams(float(yaw), float(pitch), float(illum[k]), int(bg[k])))
    return poses


def generate_dataset(identity_count: int, views_per_identity: int | Sequence[int], resolution: int,
                     seed: int = 0) -> Dataset:
    """Render ``identity_count`` identities under stratified poses.

    ``views_per_identity`` is either one count for every identity or a
    per-identity list. Every sample's randomness derives from
    ``(seed, identity, view)``, so the result is independent of
    generation order. Images are quantised to 8-bit levels.
    """
    if identity_count < 1:
        raise ValueError(f"identity_count must be >= 1, got {identity_count}")
    if isinstance(views_per_identity, (int, np.integer)):
        counts = [int(views_per_identity)] * identity_count
    else:
        counts = [int(v) for v in views_per_identity]
        if len(counts) != identity_count:
            raise ValueError(f"got {len(counts)} view counts for {identity_count} identities")
    if min(counts) < 1:
        raise ValueError("views_per_identity must be >= 1")

    total = sum(counts)
    images = np.empty((total, resolution, resolution, 3), np.float32)
    masks = np.empty((total, resolution, resolution), np.uint8)
    identities = np.empty(total, np.int64)
    views = np.empty(total, np.int64)
    poses: list[PoseParams] = []
    k = 0
    for ident, n_views in enumerate(counts):
        geno = sample_identity(seed, ident)
        for view, pose in enumerate(stratified_poses(seed, ident, n_views)):
            noise_seed = int(np.random.SeedSequence([seed, ident, view, 3]).generate_state(1)[0])
            s = render(geno, pose, resolution, noise_seed=noise_seed)
            images[k] = quantize(s.image)
            masks[k] = s.mask
            identities[k] = ident
            views[k] = view
            poses.append(pose)
            k += 1
    return Dataset(images, masks, identities, views, poses, identity_count, resolution, PALETTE, seed)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_counts(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes for an identity with ``n`` samples."""
    if n < MIN_SAMPLES_PER_IDENTITY:
        raise SplitError(f"identity has {n} samples; at least {MIN_SAMPLES_PER_IDENTITY} required")
    test = max(1, _round_half_up(TEST_FRACTION * n))
    val = _round_half_up(VAL_FRACTION * (n - test))
    return n - test - val, val, test


def split(dataset: Dataset, seed: int = 0) -> np.ndarray:
    """Assign each sample to train/val/test, per identity, and store it on ``dataset``."""
    tags = np.empty(len(dataset), dtype=object)
    for ident in np.unique(dataset.identities):
        idx = np.flatnonzero(dataset.identities == ident)
        try:
            n_train, n_val, n_test = split_counts(len(idx))
        except SplitError as e:
            raise SplitError(f"identity {int(ident)}: {e}") from None
        order = idx[np.random.default_rng([seed, int(ident)]).permutation(len(idx))]
        tags[order[:n_test]] = "test"
        tags[order[n_test : n_test + n_val]] = "val"
        tags[order[n_test + n_val :]] = "train"
    dataset.split = tags.astype(str)
    return dataset.split
