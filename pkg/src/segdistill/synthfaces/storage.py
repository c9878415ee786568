"""On-disk dataset layout.

::

    <dir>/manifest          key: value lines (format_version, identity_count,
                            resolution, palette, sample_count)
    <dir>/images/<id>_<view>.png   8-bit RGB
    <dir>/masks/<id>_<view>.png    8-bit single-channel class indices
    <dir>/splits.csv        sample,split
    <dir>/poses.csv         sample,yaw,pitch,illumination,background (optional)
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import SPLITS, Dataset, sample_name
from .render import PoseParams

MANIFEST_VERSION = 1
_NAME_RE = re.compile(r"^(\d+)_(\d+)\.png$")


class DatasetFormatError(ValueError):
    pass


class ManifestError(DatasetFormatError):
    pass


class MissingMaskError(DatasetFormatError):
    pass


class PaletteError(DatasetFormatError):
    pass


def save_dataset(dataset: Dataset, directory) -> Path:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    names = dataset.sample_names
    for name, img, mask in zip(names, dataset.images, dataset.masks):
        rgb = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(root / "images" / f"{name}.png")
        Image.fromarray(mask.astype(np.uint8), mode="L").save(root / "masks" / f"{name}.png")

    lines = [
        f"format_version: {MANIFEST_VERSION}",
        f"identity_count: {dataset.identity_count}",
        f"resolution: {dataset.resolution}",
        f"palette: {','.join(dataset.palette)}",
        f"sample_count: {len(dataset)}",
    ]
    if dataset.seed is not None:
        lines.append(f"seed: {dataset.seed}")
    (root / "manifest").write_text("\n".join(lines) + "\n")

    if dataset.split is not None:
        with open(root / "splits.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "split"])
            w.writerows(zip(names, dataset.split))
    if dataset.poses:
        with open(root / "poses.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "yaw", "pitch", "illumination", "background"])
            for name, p in zip(names, dataset.poses):
                w.writerow([name, repr(p.yaw), repr(p.pitch), repr(p.illumination), p.background])
    return root


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ManifestError(f"{path}:{lineno}: expected 'key: value', got {raw!r}")
        key, value = (s.strip() for s in line.split(":", 1))
        fields[key] = value
    required = ("format_version", "identity_count", "resolution", "palette", "sample_count")
    missing = [k for k in required if k not in fields]
    if missing:
        raise ManifestError(f"{path}: missing keys {missing}")
    try:
        out = {
            "format_version": int(fields["format_version"]),
            "identity_count": int(fields["identity_count"]),
            "resolution": int(fields["resolution"]),
            "palette": tuple(c.strip() for c in fields["palette"].split(",") if c.strip()),
            "sample_count": int(fields["sample_count"]),
            "seed": int(fields["seed"]) if "seed" in fields else None,
        }
    except ValueError as e:
        raise ManifestError(f"{path}: malformed value ({e})") from None
    if out["format_version"] != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported format_version {out['format_version']}")
    if len(out["palette"]) < 2:
        raise ManifestError(f"{path}: palette needs at least 2 classes")
    return out


def load_external(directory) -> Dataset:
    """Load and validate a dataset directory (generated or external)."""
    root = Path(directory)
    meta = read_manifest(root / "manifest")
    res = meta["resolution"]
    n_classes = len(meta["palette"])
    image_files = sorted(p for p in (root / "images").glob("*.png")) if (root / "images").is_dir() else []
    if len(image_files) != meta["sample_count"]:
        raise ManifestError(
            f"manifest sample_count {meta['sample_count']} but {len(image_files)} images found"
        )

    images = np.empty((len(image_files), res, res, 3), np.float32)
    masks = np.empty((len(image_files), res, res), np.uint8)
    identities = np.empty(len(image_files), np.int64)
    views = np.empty(len(image_files), np.int64)
    for k, img_path in enumerate(image_files):
        m = _NAME_RE.match(img_path.name)
        if not m:
            raise ManifestError(f"image file name {img_path.name!r} is not <id>_<view>.png")
        mask_path = root / "masks" / img_path.name
        if not mask_path.is_file():
            raise MissingMaskError(f"no mask for image {img_path}")
        with Image.open(img_path) as im:
            rgb = np.asarray(im.convert("RGB"))
        with Image.open(mask_path) as mm:
            if mm.mode not in ("L", "P"):
                raise PaletteError(f"{mask_path}: mask must be single-channel, got mode {mm.mode}")
            mask = np.asarray(mm)
        if rgb.shape[:2] != (res, res) or mask.shape != (res, res):
            raise ManifestError(
                f"{img_path.name}: image {rgb.shape[:2]} / mask {mask.shape} do not match "
                f"manifest resolution {res}"
            )
        if mask.max() >= n_classes:
            raise PaletteError(
                f"{mask_path}: class index {int(mask.max())} outside palette of {n_classes} classes"
            )
        images[k] = rgb.astype(np.float32) / 255.0
        masks[k] = mask
        identities[k], views[k] = int(m.group(1)), int(m.group(2))

    found = len(np.unique(identities))
    if found != meta["identity_count"] or (len(identities) and identities.max() >= meta["identity_count"]):
        raise ManifestError(
            f"manifest identity_count {meta['identity_count']} but files contain {found} identities "
            f"(max id {int(identities.max()) if len(identities) else -1})"
        )

    names = [sample_name(int(i), int(v)) for i, v in zip(identities, views)]
    poses = _read_poses(root / "poses.csv", names)
    ds = Dataset(images, masks, identities, views, poses, meta["identity_count"], res,
                 meta["palette"], meta["seed"])
    splits_path = root / "splits.csv"
    if splits_path.is_file():
        ds.split = _read_splits(splits_path, names)
    return ds


def _read_splits(path: Path, names: list[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["sample", "split"]:
        raise ManifestError(f"{path}: header must be 'sample,split'")
    table = {}
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != 2 or row[1] not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: bad row {row}")
        table[row[0]] = row[1]
    if set(table) != set(names):
        raise ManifestError(f"{path}: sample names do not match the image files")
    return np.array([table[n] for n in names])


def _read_poses(path: Path, names: list[str]) -> list[PoseParams]:
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        table = {
            r["sample"]: PoseParams(float(r["yaw"]), float(r["pitch"]), float(r["illumination"]),
                                    int(r["background"]))
            for r in reader
        }
    if set(table) != set(names):
        raise ManifestError(f"{path}: sample names do not match the image files")
    return [table[n] for n in names]
