"""Procedural paired-size dataset and ingestion of annotated real pairs.

Each pair shows the same striped top on a SMALL body (side A) and a PLUS body
(side B). Bodies are layered 2D shapes drawn with Pillow so every pixel carries
one of the 9 coarse segment labels. The canvas already spans chin (top row) to
knee line (bottom row).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from . import config
from .errors import ArgumentError, ConfigurationWarning, DatasetLoadError

KEYPOINT_NAMES = ("left_hip", "right_hip", "chin", "knee_line")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SAMPLE_FILES = ("A.png", "B.png", "A_seg.png", "B_seg.png", "meta.json")

# Paletted segmentation PNGs: label = palette index
SEG_PALETTE = [
    0, 0, 0,        # background
    230, 60, 60,    # upper garment
    60, 60, 200,    # lower garment
    240, 200, 40,   # accessories
    250, 190, 160,  # face
    90, 50, 20,     # hair
    60, 180, 80,    # arms
    150, 90, 200,   # legs
    240, 140, 90,   # torso skin
] + [0, 0, 0] * (256 - config.NUM_CLASSES)

SKIN_TONES = [
    (0.96, 0.80, 0.69), (0.88, 0.67, 0.52), (0.78, 0.57, 0.42),
    (0.62, 0.43, 0.30), (0.45, 0.30, 0.20), (0.33, 0.22, 0.15),
]

Keypoints = dict[str, tuple[float, float]]


class SizeLabel(str, Enum):
    """Garment size class."""
    SMALL = config.SMALL
    PLUS = config.PLUS


@dataclass
class GarmentParams:
    """Pattern of the top, shared by both sides of a pair."""
    stripe_count: int
    base_color: tuple[float, float, float]
    stripe_color: tuple[float, float, float]
    top_length: float  # fraction of image height, shoulder to hem

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GarmentParams":
        return cls(
            stripe_count=int(data["stripe_count"]),
            base_color=tuple(data["base_color"]),
            stripe_color=tuple(data["stripe_color"]),
            top_length=float(data["top_length"]),
        )


@dataclass
class BodyParams:
    """Size distributions and pose jitter from which the two bodies are drawn."""
    hip_means: dict[str, float] = field(default_factory=lambda: dict(config.HIP_WIDTH_MEANS))
    hip_sd: dict[str, float] = field(
        default_factory=lambda: {config.SMALL: config.HIP_WIDTH_SD, config.PLUS: config.HIP_WIDTH_SD}
    )
    max_rotation_deg: float = config.POSE_ROTATION_DEG
    arm_angle_deg: tuple[float, float] = (4.0, 14.0)

    def __post_init__(self):
        small, plus = self.hip_means[config.SMALL], self.hip_means[config.PLUS]
        if not small < plus:
            raise ArgumentError(f"SMALL hip mean ({small}) must be below PLUS hip mean ({plus})")
        pooled = math.hypot(self.hip_sd[config.SMALL], self.hip_sd[config.PLUS])
        if plus - small < 3 * pooled:
            warnings.warn(
                f"size distributions overlap: mean gap {plus - small:.3f} is under 3 pooled sd ({3 * pooled:.3f})",
                ConfigurationWarning,
                stacklevel=2,
            )

    def sample_hip_width(self, size: str, rng: np.random.Generator) -> float:
        width = rng.normal(self.hip_means[size], self.hip_sd[size])
        return float(np.clip(width, 0.12, 0.6))


@dataclass
class PairedSample:
    """The same garment worn in size A and size B."""
    image_a: np.ndarray  # H×W×3 float32 in [0, 1]
    seg_a: np.ndarray    # H×W uint8 labels
    keypoints_a: Keypoints
    image_b: np.ndarray
    seg_b: np.ndarray
    keypoints_b: Keypoints
    garment_id: str
    size_a: SizeLabel
    size_b: SizeLabel
    pattern: Optional[GarmentParams] = None
    sample_id: str = ""

    def __post_init__(self):
        self.size_a = SizeLabel(self.size_a)
        self.size_b = SizeLabel(self.size_b)
        if self.size_a == self.size_b:
            raise ArgumentError(f"pair {self.sample_id or self.garment_id} has one size on both sides")
        for side, image, seg, keypoints in (
            ("A", self.image_a, self.seg_a, self.keypoints_a),
            ("B", self.image_b, self.seg_b, self.keypoints_b),
        ):
            if image.shape[:2] != seg.shape:
                raise ArgumentError(f"side {side}: segmentation {seg.shape} does not match image {image.shape[:2]}")
            h, w = seg.shape
            for name in ("left_hip", "right_hip"):
                x, y = keypoints[name]
                if not (0 <= x <= w and 0 <= y <= h):
                    raise ArgumentError(f"side {side}: {name} ({x:.1f}, {y:.1f}) lies outside the image")

    @property
    def resolution(self) -> int:
        return self.seg_a.shape[0]

    def side(self, size: str) -> tuple[np.ndarray, np.ndarray, Keypoints]:
        """(image, seg, keypoints) of the side wearing ``size``."""
        if self.size_a == size:
            return self.image_a, self.seg_a, self.keypoints_a
        return self.image_b, self.seg_b, self.keypoints_b


def hip_distance(keypoints: Keypoints) -> float:
    (x0, y0), (x1, y1) = keypoints["left_hip"], keypoints["right_hip"]
    return math.hypot(x1 - x0, y1 - y0)


def _luminance(color: Sequence[float]) -> float:
    return 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2]


def random_garment(rng: np.random.Generator, max_stripes: int = config.MAX_STRIPES) -> GarmentParams:
    """Draw a top: base color, contrasting stripe color, stripe count, length."""
    base = tuple(float(c) for c in rng.uniform(0.1, 0.9, 3))
    if _luminance(base) > 0.5:
        stripe = tuple(0.25 * c for c in base)
    else:
        stripe = tuple(c + 0.75 * (1 - c) for c in base)
    return GarmentParams(
        stripe_count=int(rng.integers(0, max_stripes + 1)),
        base_color=base,
        stripe_color=stripe,
        top_length=float(rng.uniform(0.42, 0.5)),
    )


def _rgb(color: Sequence[float]) -> tuple[int, int, int]:
    return tuple(int(round(255 * c)) for c in color)


def _arm_polygon(shoulder: tuple[float, float], angle_deg: float, length: float, width: float, side: int):
    """Quadrilateral hanging from ``shoulder``, tilted outward by ``angle_deg``."""
    a = math.radians(angle_deg)
    dx, dy = side * math.sin(a), math.cos(a)
    nx, ny = dy, -dx
    sx, sy = shoulder
    ex, ey = sx + dx * length, sy + dy * length
    hw = width / 2
    return [(sx + nx * hw, sy + ny * hw), (sx - nx * hw, sy - ny * hw),
            (ex - nx * hw, ey - ny * hw), (ex + nx * hw, ey + ny * hw)]


def render_body(
    garment: GarmentParams,
    size: str,
    hip_width: float,
    rng: np.random.Generator,
    resolution: int,
    body: BodyParams,
) -> tuple[np.ndarray, np.ndarray, Keypoints]:
    """Draw one chin-to-knee figure wearing ``garment``.

    Returns:
        (uint8 H×W×3 image, uint8 H×W labels, keypoints in pixels)
    """
    r = float(resolution)
    plus = size == config.PLUS
    cx = r * (0.5 + rng.uniform(-0.02, 0.02))
    hip_half = hip_width * r / 2
    outer_hip = hip_half * 1.25
    shoulder_half = outer_hip * rng.uniform(0.95, 1.08)
    waist_half = 0.5 * (shoulder_half + outer_hip) * (0.93 if plus else 0.88)
    shoulder_y = 0.10 * r
    hem_y = shoulder_y + garment.top_length * r * (1.05 if plus else 1.0)
    waist_y = shoulder_y + 0.5 * (hem_y - shoulder_y)
    hip_y = 0.58 * r
    shorts_y = 0.80 * r
    arm_width = r * (0.08 if plus else 0.06) * rng.uniform(0.9, 1.1)
    arm_angle = rng.uniform(*body.arm_angle_deg)
    rotation = rng.uniform(-body.max_rotation_deg, body.max_rotation_deg)

    background = tuple(float(c) for c in rng.uniform(0.82, 0.96, 3))
    skin = SKIN_TONES[int(rng.integers(len(SKIN_TONES)))]
    hair_color = tuple(float(c) for c in rng.uniform(0.05, 0.45, 3))
    bottoms = tuple(float(c) for c in rng.uniform(0.1, 0.5, 3))

    size_px = (resolution, resolution)
    image = Image.new("RGB", size_px, _rgb(background))
    labels = Image.new("L", size_px, 0)
    draw_image = ImageDraw.Draw(image)
    draw_labels = ImageDraw.Draw(labels)

    def paint(polygon, color, label):
        draw_image.polygon(polygon, fill=_rgb(color))
        draw_labels.polygon(polygon, fill=label)

    # Legs below the shorts
    gap = 0.02 * r
    paint([(cx - outer_hip * 0.9, shorts_y - 1), (cx - gap, shorts_y - 1), (cx - gap, r), (cx - outer_hip * 0.85, r)],
          skin, 7)
    paint([(cx + gap, shorts_y - 1), (cx + outer_hip * 0.9, shorts_y - 1), (cx + outer_hip * 0.85, r), (cx + gap, r)],
          skin, 7)
    # Lower garment
    paint([(cx - outer_hip, hem_y - 2), (cx + outer_hip, hem_y - 2),
           (cx + outer_hip * 0.95, shorts_y), (cx - outer_hip * 0.95, shorts_y)], bottoms, 2)
    # Neck
    neck_half = 0.05 * r
    paint([(cx - neck_half, 0), (cx + neck_half, 0), (cx + neck_half, shoulder_y + 2), (cx - neck_half, shoulder_y + 2)],
          skin, 8)

    # Arms with short sleeves; sleeves belong to the garment mask
    garment_mask = Image.new("L", size_px, 0)
    draw_garment = ImageDraw.Draw(garment_mask)
    arm_length = 0.55 * r
    for side in (-1, 1):
        shoulder = (cx + side * (shoulder_half - arm_width / 2), shoulder_y + arm_width / 2)
        paint(_arm_polygon(shoulder, arm_angle, arm_length, arm_width, side), skin, 6)
        sleeve = _arm_polygon(shoulder, arm_angle, 0.22 * r, arm_width * 1.15, side)
        draw_garment.polygon(sleeve, fill=255)

    torso = [(cx - shoulder_half, shoulder_y), (cx + shoulder_half, shoulder_y),
             (cx + waist_half, waist_y), (cx + outer_hip * 1.02, hem_y),
             (cx - outer_hip * 1.02, hem_y), (cx - waist_half, waist_y)]
    draw_garment.polygon(torso, fill=255)

    # Horizontal stripe bands across the garment span, base color first and last
    pattern = np.empty((resolution, resolution, 3), dtype=np.uint8)
    pattern[:] = _rgb(garment.base_color)
    if garment.stripe_count > 0:
        n_bands = 2 * garment.stripe_count + 1
        band_h = (hem_y - shoulder_y) / n_bands
        rows = np.arange(resolution) + 0.5
        band = np.floor((rows - shoulder_y) / band_h).astype(int)
        striped = (band % 2 == 1) & (band > 0) & (band < n_bands)
        pattern[striped] = _rgb(garment.stripe_color)
    image.paste(Image.fromarray(pattern, "RGB"), (0, 0), garment_mask)
    labels.paste(1, (0, 0), garment_mask)

    # Hair over the shoulders
    if rng.random() < 0.7:
        hair_len = shoulder_y + rng.uniform(0.04, 0.12) * r
        for side in (-1, 1):
            x_in = cx + side * neck_half
            x_out = cx + side * (neck_half + 0.04 * r)
            paint([(x_in, 0), (x_out, 0), (x_out, hair_len), (x_in, hair_len)], hair_color, 5)

    # Pendant
    if rng.random() < 0.3:
        py = shoulder_y + 0.07 * r
        pr = max(0.02 * r, 1.0)
        draw_image.ellipse([cx - pr, py - pr, cx + pr, py + pr], fill=_rgb((0.85, 0.7, 0.2)))
        draw_labels.ellipse([cx - pr, py - pr, cx + pr, py + pr], fill=3)

    center = (cx, hip_y)
    image = image.rotate(rotation, resample=Image.NEAREST, center=center, fillcolor=_rgb(background))
    labels = labels.rotate(rotation, resample=Image.NEAREST, center=center, fillcolor=0)

    keypoints = {
        "left_hip": _rotate_point((cx - hip_half, hip_y), center, rotation),
        "right_hip": _rotate_point((cx + hip_half, hip_y), center, rotation),
        "chin": (cx, 0.0),
        "knee_line": (cx, r),
    }
    return np.asarray(image, dtype=np.uint8), np.asarray(labels, dtype=np.uint8), keypoints


def _rotate_point(point, center, angle_deg):
    """Where Image.rotate(angle_deg, center=center) moves ``point``."""
    t = -math.radians(angle_deg)
    dx, dy = point[0] - center[0], point[1] - center[1]
    return (center[0] + math.cos(t) * dx - math.sin(t) * dy,
            center[1] + math.sin(t) * dx + math.cos(t) * dy)


def generate_pair(
    garment_params: Optional[GarmentParams] = None,
    body_params: Optional[BodyParams] = None,
    rng_seed: int = 0,
    resolution: int = config.DESK_RESOLUTION,
    garment_id: Optional[str] = None,
) -> PairedSample:
    """Render one garment on a SMALL body (A) and a PLUS body (B).

    Args:
        garment_params: Pattern spec; drawn from the seed when omitted
        body_params: Size distributions and pose jitter
        rng_seed: Seed for every random choice in the pair
        resolution: Square canvas size in pixels
        garment_id: Identifier of the garment (x); derived from the seed when omitted

    Returns:
        PairedSample with float images in [0, 1]
    """
    rng = np.random.default_rng(rng_seed)
    body = body_params or BodyParams()
    garment = garment_params or random_garment(rng)

    sides = {}
    for size in (config.SMALL, config.PLUS):
        hip_width = body.sample_hip_width(size, rng)
        sides[size] = render_body(garment, size, hip_width, rng, resolution, body)

    (img_a, seg_a, kp_a), (img_b, seg_b, kp_b) = sides[config.SMALL], sides[config.PLUS]
    return PairedSample(
        image_a=img_a.astype(np.float32) / 255.0,
        seg_a=seg_a,
        keypoints_a=kp_a,
        image_b=img_b.astype(np.float32) / 255.0,
        seg_b=seg_b,
        keypoints_b=kp_b,
        garment_id=garment_id or f"g{rng_seed & 0xFFFFFFFF:08x}",
        size_a=SizeLabel.SMALL,
        size_b=SizeLabel.PLUS,
        pattern=garment,
    )


def split_counts(n_pairs: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n_pairs`` into splits."""
    if len(fractions) != len(config.SPLIT_NAMES):
        raise ArgumentError(f"need {len(config.SPLIT_NAMES)} split fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-6:
        raise ArgumentError(f"split fractions must be non-negative and sum to 1, got {tuple(fractions)}")
    quotas = [n_pairs * f for f in fractions]
    counts = [int(math.floor(q + 1e-9)) for q in quotas]
    leftover = n_pairs - sum(counts)
    by_remainder = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[:leftover]:
        counts[i] += 1
    if min(counts) == 0:
        raise ArgumentError(f"{n_pairs} pairs cannot fill every split with fractions {tuple(fractions)}")
    return counts


@dataclass
class DatasetManifest:
    """Split lists of a dataset directory, with lazy sample access."""
    root: Path
    splits: dict[str, list[str]]
    resolution: int
    seed: Optional[int] = None
    sources: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        seen: dict[str, str] = {}
        for split, ids in self.splits.items():
            for sample_id in ids:
                if sample_id in seen:
                    raise DatasetLoadError(sample_id, f"listed in both {seen[sample_id]} and {split}")
                seen[sample_id] = split
        self._split_of = seen

    def __len__(self):
        return len(self._split_of)

    def ids(self, split: str) -> list[str]:
        return list(self.splits.get(split, []))

    def sample_dir(self, sample_id: str) -> Path:
        if sample_id not in self._split_of:
            raise DatasetLoadError(sample_id, "not listed in the manifest")
        return self.root / self._split_of[sample_id] / sample_id

    def load_meta(self, sample_id: str) -> dict:
        path = self.sample_dir(sample_id) / "meta.json"
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DatasetLoadError(sample_id, f"cannot read meta.json: {e}") from e

    def load_sample(self, sample_id: str) -> PairedSample:
        """Read one pair from disk."""
        sample_dir = self.sample_dir(sample_id)
        meta = self.load_meta(sample_id)
        try:
            image_a = read_image(sample_dir / "A.png")
            image_b = read_image(sample_dir / "B.png")
            seg_a = read_labels(sample_dir / "A_seg.png")
            seg_b = read_labels(sample_dir / "B_seg.png")
        except OSError as e:
            raise DatasetLoadError(sample_id, f"cannot read image: {e}") from e
        for seg in (seg_a, seg_b):
            if seg.size and seg.max() >= config.NUM_CLASSES:
                raise DatasetLoadError(sample_id, f"segmentation label {int(seg.max())} outside 0..8")
        try:
            return PairedSample(
                image_a=image_a,
                seg_a=seg_a,
                keypoints_a=_keypoints_from_json(meta["keypoints"]["A"]),
                image_b=image_b,
                seg_b=seg_b,
                keypoints_b=_keypoints_from_json(meta["keypoints"]["B"]),
                garment_id=meta["garment_id"],
                size_a=meta["sizes"]["A"],
                size_b=meta["sizes"]["B"],
                pattern=GarmentParams.from_dict(meta["pattern"]) if meta.get("pattern") else None,
                sample_id=sample_id,
            )
        except (KeyError, ValueError) as e:
            raise DatasetLoadError(sample_id, f"invalid metadata: {e}") from e

    def samples(self, split: str):
        for sample_id in self.ids(split):
            yield self.load_sample(sample_id)

    def to_json(self) -> str:
        payload = {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "resolution": self.resolution,
            "splits": {name: self.ids(name) for name in config.SPLIT_NAMES},
            "sources": dict(sorted(self.sources.items())),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(self.to_json())
        return path


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def read_labels(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def write_image(image: np.ndarray, path: Path):
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, "RGB").save(path, format="PNG")


def write_labels(labels: np.ndarray, path: Path):
    h, w = labels.shape
    im = Image.frombytes("P", (w, h), np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    im.putpalette(SEG_PALETTE)
    im.save(path, format="PNG")


def _keypoints_to_json(keypoints: Keypoints) -> dict:
    return {name: [float(keypoints[name][0]), float(keypoints[name][1])] for name in KEYPOINT_NAMES if name in keypoints}


def _keypoints_from_json(data: dict) -> Keypoints:
    return {name: (float(xy[0]), float(xy[1])) for name, xy in data.items()}


def write_sample(sample: PairedSample, sample_dir: Path, source: str = "synthetic", seed: Optional[int] = None):
    """Write one pair in the dataset directory layout."""
    sample_dir.mkdir(parents=True, exist_ok=True)
    write_image(sample.image_a, sample_dir / "A.png")
    write_image(sample.image_b, sample_dir / "B.png")
    write_labels(sample.seg_a, sample_dir / "A_seg.png")
    write_labels(sample.seg_b, sample_dir / "B_seg.png")
    meta = {
        "garment_id": sample.garment_id,
        "sizes": {"A": sample.size_a.value, "B": sample.size_b.value},
        "keypoints": {"A": _keypoints_to_json(sample.keypoints_a), "B": _keypoints_to_json(sample.keypoints_b)},
        "pattern": sample.pattern.to_dict() if sample.pattern else None,
        "source": source,
        "seed": seed,
    }
    (sample_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def generate_dataset(
    n_pairs: int,
    split_fractions: Sequence[float] = config.DEFAULT_SPLIT_FRACTIONS,
    resolution: int = config.DESK_RESOLUTION,
    seed: int = 0,
    root: Optional[Path] = None,
    body_params: Optional[BodyParams] = None,
) -> DatasetManifest:
    """Generate ``n_pairs`` synthetic pairs under ``root`` and write the manifest.

    Per-sample seeds are spawned from ``seed`` so samples are independent and the
    whole tree is byte-identical for identical (n_pairs, seed, resolution).
    """
    if root is None:
        raise ArgumentError("generate_dataset needs an output root")
    counts = split_counts(n_pairs, split_fractions)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    children = np.random.SeedSequence(seed).spawn(n_pairs)
    sample_seeds = [int(child.generate_state(1)[0]) for child in children]
    order = np.random.default_rng(seed).permutation(n_pairs)

    splits: dict[str, list[str]] = {}
    start = 0
    for name, count in zip(config.SPLIT_NAMES, counts):
        splits[name] = sorted(f"{int(i):05d}" for i in order[start:start + count])
        start += count

    body = body_params or BodyParams()
    sources = {}
    for name, ids in splits.items():
        for sample_id in ids:
            sample_seed = sample_seeds[int(sample_id)]
            sample = generate_pair(None, body, sample_seed, resolution)
            sample.sample_id = sample_id
            write_sample(sample, root / name / sample_id, seed=sample_seed)
            sources[sample_id] = "synthetic"

    manifest = DatasetManifest(root=root, splits=splits, resolution=resolution, seed=seed, sources=sources)
    manifest.write()
    print(f"Generated {n_pairs} pairs at {resolution}×{resolution} in {root} "
          f"(train/val/test = {'/'.join(str(c) for c in counts)})")
    return manifest


def load_dataset(path: Path, verify: bool = True) -> DatasetManifest:
    """Open a dataset directory.

    Args:
        path: Dataset root holding manifest.json
        verify: Check that every listed sample has all of its files

    Returns:
        DatasetManifest with lazy per-sample loading
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    try:
        payload = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetLoadError("<manifest>", f"cannot read {manifest_path}: {e}") from e

    manifest = DatasetManifest(
        root=root,
        splits={name: list(payload["splits"].get(name, [])) for name in config.SPLIT_NAMES},
        resolution=int(payload["resolution"]),
        seed=payload.get("seed"),
        sources=dict(payload.get("sources", {})),
    )
    if verify:
        for name in config.SPLIT_NAMES:
            for sample_id in manifest.ids(name):
                sample_dir = root / name / sample_id
                missing = [f for f in SAMPLE_FILES if not (sample_dir / f).is_file()]
                if missing:
                    raise DatasetLoadError(sample_id, f"missing {', '.join(missing)} in {sample_dir}")
    return manifest


def crop_window(keypoints: Keypoints, height: int, width: int) -> tuple[int, int, int, int]:
    """(top, bottom, left, right) of the square chin-to-knee crop.

    The window is centered on the hips and kept inside the image when it fits.
    """
    for name in ("chin", "knee_line"):
        if name not in keypoints:
            raise ArgumentError(f"crop needs the {name} keypoint")
    for name, (x, y) in keypoints.items():
        if not (0 <= x <= width and 0 <= y <= height):
            raise ArgumentError(f"keypoint {name} ({x:.1f}, {y:.1f}) lies outside the {height}×{width} image")
    top = int(round(keypoints["chin"][1]))
    bottom = int(round(keypoints["knee_line"][1]))
    if bottom <= top:
        raise ArgumentError(f"knee line (y={bottom}) must lie below the chin (y={top})")
    side = bottom - top
    if "left_hip" in keypoints and "right_hip" in keypoints:
        center_x = 0.5 * (keypoints["left_hip"][0] + keypoints["right_hip"][0])
    else:
        center_x = width / 2
    left = int(round(center_x - side / 2))
    if side <= width:
        left = min(max(left, 0), width - side)
    return top, bottom, left, left + side


def remap_keypoints(keypoints: Keypoints, window: tuple[int, int, int, int], target_resolution: int) -> Keypoints:
    top, bottom, left, _ = window
    scale = target_resolution / (bottom - top)
    return {name: ((x - left) * scale, (y - top) * scale) for name, (x, y) in keypoints.items()}


def crop_and_resize(
    image: np.ndarray,
    seg: np.ndarray,
    keypoints: Keypoints,
    target_resolution: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Crop chin to knee line as a square and resize to ``target_resolution``.

    Columns outside the image are filled by edge replication (image) and
    background (segmentation).
    """
    h, w = seg.shape
    top, bottom, left, right = crop_window(keypoints, h, w)
    pad_left, pad_right = max(0, -left), max(0, right - w)
    if pad_left or pad_right:
        image = np.pad(image, ((0, 0), (pad_left, pad_right), (0, 0)), mode="edge")
        seg = np.pad(seg, ((0, 0), (pad_left, pad_right)), mode="constant", constant_values=0)
        left += pad_left
        right += pad_left
    image = image[top:bottom, left:right]
    seg = seg[top:bottom, left:right]

    if image.shape[0] == target_resolution:
        return image.astype(np.float32), seg.astype(np.uint8)
    size = (target_resolution, target_resolution)
    as_bytes = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    resized = Image.fromarray(as_bytes, "RGB").resize(size, Image.BILINEAR)
    resized_seg = Image.fromarray(np.ascontiguousarray(seg, dtype=np.uint8), "L").resize(size, Image.NEAREST)
    return np.asarray(resized, dtype=np.float32) / 255.0, np.asarray(resized_seg, dtype=np.uint8)


def ingest_pairs(source_dir: Path, dataset_root: Path, split: str = "train", prefix: str = "real-") -> DatasetManifest:
    """Add annotated real pairs to an existing dataset.

    Every subdirectory of ``source_dir`` must hold A.png, B.png, A_seg.png,
    B_seg.png (label per pixel) and meta.json with ``sizes`` and ``keypoints``
    for both sides. Images are cropped chin to knee and resized to the dataset
    resolution.
    """
    if split not in config.SPLIT_NAMES:
        raise ArgumentError(f"unknown split {split!r}")
    manifest = load_dataset(dataset_root)
    source_dir = Path(source_dir)
    added = 0
    for pair_dir in sorted(p for p in source_dir.iterdir() if p.is_dir()):
        sample_id = f"{prefix}{pair_dir.name}"
        missing = [f for f in SAMPLE_FILES if not (pair_dir / f).is_file()]
        if missing:
            raise DatasetLoadError(sample_id, f"missing {', '.join(missing)} in {pair_dir}")
        try:
            meta = json.loads((pair_dir / "meta.json").read_text())
            sides = {}
            for side in ("A", "B"):
                keypoints = _keypoints_from_json(meta["keypoints"][side])
                image = read_image(pair_dir / f"{side}.png")
                seg = read_labels(pair_dir / f"{side}_seg.png")
                window = crop_window(keypoints, *seg.shape)
                image, seg = crop_and_resize(image, seg, keypoints, manifest.resolution)
                sides[side] = (image, seg, remap_keypoints(keypoints, window, manifest.resolution))
            sample = PairedSample(
                image_a=sides["A"][0], seg_a=sides["A"][1], keypoints_a=sides["A"][2],
                image_b=sides["B"][0], seg_b=sides["B"][1], keypoints_b=sides["B"][2],
                garment_id=meta.get("garment_id", pair_dir.name),
                size_a=meta["sizes"]["A"], size_b=meta["sizes"]["B"],
                sample_id=sample_id,
            )
        except (KeyError, ValueError, OSError) as e:
            raise DatasetLoadError(sample_id, str(e)) from e
        write_sample(sample, manifest.root / split / sample_id, source="ingested")
        if sample_id not in manifest.splits[split]:
            manifest.splits[split].append(sample_id)
        manifest.sources[sample_id] = "ingested"
        added += 1

    manifest = DatasetManifest(
        root=manifest.root, splits=manifest.splits, resolution=manifest.resolution,
        seed=manifest.seed, sources=manifest.sources,
    )
    manifest.write()
    print(f"Ingested {added} real pairs into {split} of {manifest.root}")
    return manifest


def hip_distances(manifest: DatasetManifest, split: str, size: str) -> list[float]:
    """Hip keypoint distances (pixels) of every side wearing ``size`` in a split."""
    distances = []
    for sample_id in manifest.ids(split):
        meta = manifest.load_meta(sample_id)
        for side in ("A", "B"):
            if meta["sizes"][side] == size:
                distances.append(hip_distance(_keypoints_from_json(meta["keypoints"][side])))
    return distances
