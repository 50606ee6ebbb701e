"""Dataset generation constants."""

# IDX
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# Composition
GLYPH_SIZE = 28
INK_THRESHOLD = 0.1
DEFAULT_DIGITS = 2
DEFAULT_CANVAS = 64
DEFAULT_TRAIN = 6000
DEFAULT_TEST = 10000
DEFAULT_SCALE_RANGE = (0.4, 2.0)
MAX_PLACEMENT_RETRIES = 100
PLACEMENT_POLICY = "left-to-right, uniform gap split, vertical jitter, no overlap"

# Procedural glyphs; train and test draw variation indices from disjoint ranges
SEGMENT_INDEX_SPAN = 2 ** 30
SEGMENT_SPLIT_OFFSET = {"train": 0, "test": 2 ** 30}
SEGMENTS = {
    "a": ((0.0, 0.0), (1.0, 0.0)),
    "b": ((1.0, 0.0), (1.0, 1.0)),
    "c": ((1.0, 1.0), (1.0, 2.0)),
    "d": ((0.0, 2.0), (1.0, 2.0)),
    "e": ((0.0, 1.0), (0.0, 2.0)),
    "f": ((0.0, 0.0), (0.0, 1.0)),
    "g": ((0.0, 1.0), (1.0, 1.0)),
}
DIGIT_SEGMENTS = {
    0: "abcdef",
    1: "bc",
    2: "abged",
    3: "abgcd",
    4: "fgbc",
    5: "afgcd",
    6: "afgedc",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}

# Split codes used when deriving per-sample seeds
SPLIT_CODES = {"train": 0, "test": 1, "variants": 2}

# Serialization
DATASET_MAGIC = b"MCDS"
DATASET_VERSION = 1
DATASET_HEADER = "<4sHIHHHH"
MANIFEST_NAME = "manifest.json"
