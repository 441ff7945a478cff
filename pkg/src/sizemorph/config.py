"""Configuration settings for sizemorph."""

import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Paths
PROJECT_ROOT = Path(__file__).parent.parent.parent
DEFAULT_OUTPUT_ROOT = PROJECT_ROOT / "runs"


def output_root() -> Path:
    """Output root, overridable with SIZEMORPH_OUT (env or .env file)."""
    override = os.getenv("SIZEMORPH_OUT")
    return Path(override) if override else DEFAULT_OUTPUT_ROOT


REGISTRY_DB_NAME = "registry.db"

# Segmentation: 9 coarse classes, label = index
SEGMENT_CLASSES = [
    "background",
    "upper_garment",
    "lower_garment",
    "accessories",
    "face",
    "hair",
    "arms",
    "legs",
    "torso_skin",
]
NUM_CLASSES = len(SEGMENT_CLASSES)
UPPER_GARMENT = SEGMENT_CLASSES.index("upper_garment")

# Size labels
SMALL = "SMALL"
PLUS = "PLUS"
SIZE_TO_TARGET = {SMALL: 0.0, PLUS: 1.0}

# Loss weights (smoothness, classifier BCE, image disc, segmentation disc)
LAMBDA_SMOOTH = 30.0
LAMBDA_BCE = 1000.0
LAMBDA_ADV_IMG = 1.0
LAMBDA_ADV_SEG = 1.0

# Sampling seed for latent vectors in reported results
LATENT_SEED = 117

# Desk-scale generator channel schedule; wider resolutions fall back to the tail
CHANNEL_SCHEDULE = {4: 256, 8: 256, 16: 128, 32: 64, 64: 32, 128: 32, 256: 16, 512: 16}
DESK_RESOLUTION = 64
FULL_RESOLUTION = 512
FULL_CLASSIFIER_RESOLUTION = 224

# Dataset
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLIT_FRACTIONS = (0.91, 0.06, 0.03)  # 1870/116/67 pairs
HIP_WIDTH_MEANS = {SMALL: 0.28, PLUS: 0.38}  # fraction of image width
HIP_WIDTH_SD = 0.02
MAX_STRIPES = 5
POSE_ROTATION_DEG = 5.0

# Baseline and visualisation
BASELINE_RATIO = 1.36
BASELINE_RATIOS = (1.2, 1.36, 1.5)
QUIVER_STRIDE = 20

# Evaluation
HISTOGRAM_BINS = 32
STRIPE_SMOOTHING = 3
STRICT_MASK_CONFIDENCE = 1.0 - 1e-4
REPORT_VERSION = 1
