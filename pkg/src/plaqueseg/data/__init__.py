"""Image I/O, augmentation, synthetic phantoms and dataset layout."""
from .transforms import Augmentation, Sample, augment, augment_all, elastic_deform
from .dataset import Fold, FoldSplit, kfold, load_dataset, read_manifest, write_dataset
from .io import ImageFormatError, load_image, load_mask, save_image, save_mask
from .phantom import PhantomConfig, PhantomLayout, phantom_layout, synth_dataset, synth_phantom

__all__ = [
    "Augmentation", "Sample", "augment", "augment_all", "elastic_deform",
    "Fold", "FoldSplit", "kfold", "load_dataset", "read_manifest", "write_dataset",
    "ImageFormatError", "load_image", "load_mask", "save_image", "save_mask",
    "PhantomConfig", "PhantomLayout", "phantom_layout", "synth_dataset", "synth_phantom",
]
