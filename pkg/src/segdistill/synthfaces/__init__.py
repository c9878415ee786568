"""Synthetic pose-varied faces with exact segmentation masks."""

from .dataset import (
    SPLITS,
    DataSplit,
    DataSplits,
    Dataset,
    SplitError,
    generate_dataset,
    quantize,
    sample_name,
    split,
    split_counts,
    stratified_poses,
)
from .render import (
    PALETTE,
    IdentityGenotype,
    PoseParams,
    Sample,
    genotype_separation,
    render,
    sample_identity,
)
from .storage import (
    DatasetFormatError,
    ManifestError,
    MissingMaskError,
    PaletteError,
    load_external,
    save_dataset,
)

__all__ = [
    "PALETTE", "SPLITS", "DataSplit", "DataSplits", "Dataset", "DatasetFormatError",
    "IdentityGenotype", "ManifestError", "MissingMaskError", "PaletteError", "PoseParams",
    "Sample", "SplitError", "generate_dataset", "genotype_separation", "load_external",
    "quantize", "render", "sample_identity", "sample_name", "save_dataset", "split",
    "split_counts", "stratified_poses",
]
