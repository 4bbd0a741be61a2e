from .augment import AugmentConfig, augment, make_augmenter
from .loader import export_synthetic, load_directory
from .splits import DatasetSplits, make_splits, stratified_split
from .synthetic import CLASS_NAMES, SyntheticSpec, generate, generate_arrays, render
