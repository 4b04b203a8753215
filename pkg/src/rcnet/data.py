"""Dataset ingestion, padding, splits, and train-time augmentation.

Expected layouts (binary PPM images, binary PGM label/mask maps; convert
other formats offline):

    drive_root/
      train/ images/ labels/ masks/      20 files per directory
      test/  images/ labels/ masks/      20 files per directory
    stare_root/
      images/                            20 files
      labels/                            20 files (first-annotator maps)

Pairing is by sorted filename order within each directory; the sample id is
the image file stem.  DRIVE images must be 584x565 and STARE 605x700 (rows x
columns); both are zero-padded on the bottom/right to a multiple of 4 so two
pooling stages divide evenly, with the pad region excluded through the FOV
mask.  STARE ships no FOV masks, so one is synthesized from the red channel
(threshold at 0.15 of its max, keep the largest connected component, fill
holes); pass fov_mode="full" to evaluate over whole images instead.

Augmentation is rotations about the image center plus global brightness
scaling.  Right-angle rotations are exact pixel permutations; other angles
use bilinear interpolation for the image and nearest-neighbor for label and
FOV, with out-of-support pixels filled 0 and excluded via the rotated FOV.
"""

from __future__ import annotations

import zlib
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .netpbm import read_netpbm
from .tensor import Tensor

DRIVE_HW = (584, 565)
STARE_HW = (605, 700)


@dataclass
class Sample:
    image: Tensor  # [3, h, w] float32 in [0, 1]
    label: np.ndarray  # uint8 [h, w], 1 = vessel
    fov: np.ndarray  # uint8 [h, w], 1 = inside field of view
    id: str
    orig_hw: tuple[int, int]  # pre-padding size, for cropping predictions

    def validate(self) -> None:
        h, w = self.label.shape
        if tuple(self.image.shape) != (3, h, w) or self.fov.shape != (h, w):
            raise ValueError(f"{self.id}: image/label/fov dims disagree")
        for name in ("label", "fov"):
            arr = getattr(self, name)
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{self.id}: {name} is not binary")


@dataclass
class DatasetSplit:
    train: list[Sample]
    test: list[Sample]
    protocol: str

    def __post_init__(self):
        overlap = {s.id for s in self.train} & {s.id for s in self.test}
        if overlap:
            raise ValueError(f"train/test ids overlap: {sorted(overlap)}")


def _pad_to_multiple(h: int, w: int, multiple: int = 4) -> tuple[int, int]:
    return (-h % multiple, -w % multiple)


def pad_sample(image: np.ndarray, label: np.ndarray, fov: np.ndarray,
               multiple: int = 4):
    """Zero-pads bottom/right; pad pixels carry fov = 0."""
    ph, pw = _pad_to_multiple(image.shape[1], image.shape[2], multiple)
    if ph == 0 and pw == 0:
        return image, label, fov
    image = np.pad(image, ((0, 0), (0, ph), (0, pw)))
    label = np.pad(label, ((0, ph), (0, pw)))
    fov = np.pad(fov, ((0, ph), (0, pw)))
    return image, label, fov


def load_image_rgb(path) -> np.ndarray:
    """[3, h, w] float32 scaled to [0, 1]."""
    arr = read_netpbm(path)
    if arr.ndim != 3:
        raise ValueError(f"{path}: expected a color (P6) image")
    maxval = 65535 if arr.dtype == np.uint16 else 255
    return np.ascontiguousarray(
        arr.transpose(2, 0, 1).astype(np.float32) / maxval)


def load_binary_map(path) -> np.ndarray:
    """uint8 [h, w]; grayscale thresholded at half of maxval."""
    arr = read_netpbm(path)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    maxval = 65535 if arr.dtype == np.uint16 else 255
    return (arr.astype(np.float64) >= 0.5 * maxval).astype(np.uint8)


def _sorted_files(d: Path) -> list[Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"missing dataset directory {d}")
    files = sorted(p for p in d.iterdir() if p.is_file())
    if not files:
        raise FileNotFoundError(f"no files in {d}")
    return files


def _make_sample(img_path, label_path, mask_path, expect_hw) -> Sample:
    image = load_image_rgb(img_path)
    label = load_binary_map(label_path)
    if mask_path is not None:
        fov = load_binary_map(mask_path)
    else:
        fov = synthesize_fov(image)
    if image.shape[1:] != expect_hw:
        raise ValueError(f"{img_path}: size {image.shape[1:]} != {expect_hw}")
    if label.shape != expect_hw or fov.shape != expect_hw:
        raise ValueError(f"{img_path}: label/mask size mismatch")
    image, label, fov = pad_sample(image, label, fov)
    s = Sample(Tensor(image), label, fov, img_path.stem, expect_hw)
    s.validate()
    return s


def _load_dir_triplet(root: Path, expect_hw, expect_count) -> list[Sample]:
    images = _sorted_files(root / "images")
    labels = _sorted_files(root / "labels")
    masks = _sorted_files(root / "masks")
    if not len(images) == len(labels) == len(masks) == expect_count:
        raise ValueError(
            f"{root}: expected {expect_count} images/labels/masks, got "
            f"{len(images)}/{len(labels)}/{len(masks)}")
    return [_make_sample(i, l, m, expect_hw)
            for i, l, m in zip(images, labels, masks)]


def load_drive(root) -> DatasetSplit:
    root = Path(root)
    train = _load_dir_triplet(root / "train", DRIVE_HW, 20)
    test = _load_dir_triplet(root / "test", DRIVE_HW, 20)
    return DatasetSplit(train, test, "drive-fixed")


def synthesize_fov(image: np.ndarray) -> np.ndarray:
    """FOV from the red channel: threshold at 0.15 of its max, keep the
    largest connected component, fill holes."""
    from scipy import ndimage

    red = image[0]
    mask = red >= 0.15 * red.max()
    labeled, n = ndimage.label(mask)
    if n == 0:
        raise ValueError("cannot synthesize a field of view: image is black")
    sizes = ndimage.sum_labels(np.ones_like(labeled), labeled,
                               index=np.arange(1, n + 1))
    mask = labeled == (1 + int(np.argmax(sizes)))
    return ndimage.binary_fill_holes(mask).astype(np.uint8)


def load_stare(root, protocol: str = "stare-50-50",
               holdout_index: int = 0, fov_mode: str = "synth") -> DatasetSplit:
    root = Path(root)
    images = _sorted_files(root / "images")
    labels = _sorted_files(root / "labels")
    if len(images) != 20 or len(labels) != 20:
        raise ValueError(f"{root}: expected 20 images and 20 labels, got "
                         f"{len(images)}/{len(labels)}")
    if fov_mode not in ("synth", "full"):
        raise ValueError(f"unknown fov_mode {fov_mode!r}")
    samples = []
    for i, l in zip(images, labels):
        s = _make_sample(i, l, None, STARE_HW)
        if fov_mode == "full":
            h, w = s.orig_hw
            fov = np.zeros(s.label.shape, np.uint8)
            fov[:h, :w] = 1
            s = replace(s, fov=fov)
        samples.append(s)
    if protocol == "stare-50-50":
        return DatasetSplit(samples[:10], samples[10:], protocol)
    if protocol == "stare-loo":
        if not 0 <= holdout_index <= 19:
            raise ValueError(f"holdout index {holdout_index} outside 0..19")
        test = [samples[holdout_index]]
        train = samples[:holdout_index] + samples[holdout_index + 1:]
        return DatasetSplit(train, test, f"stare-loo({holdout_index})")
    raise ValueError(f"unknown protocol {protocol!r}")


# ---------------------------------------------------------------------------
# rotation


def _right_angle_grids(h, w, angle):
    """Integer source grids for exact right-angle rotation, or None when the
    rotated lattice does not land on pixel centers."""
    rr = np.arange(h)[:, None]
    cc = np.arange(w)[None, :]
    if angle == 0:
        return np.broadcast_to(rr, (h, w)), np.broadcast_to(cc, (h, w))
    if angle == 180:
        return np.broadcast_to((h - 1) - rr, (h, w)), \
            np.broadcast_to((w - 1) - cc, (h, w))
    if (h + w) % 2:
        return None
    if angle == 90:
        src_r = np.broadcast_to((h + w - 2) // 2 - cc, (h, w))
        src_c = np.broadcast_to(rr + (w - h) // 2, (h, w))
        return src_r, src_c
    if angle == 270:
        src_r = np.broadcast_to(cc + (h - w) // 2, (h, w))
        src_c = np.broadcast_to((h + w - 2) // 2 - rr, (h, w))
        return src_r, src_c
    return None


def _float_grids(h, w, angle_deg):
    """Inverse-map source coordinates about the image center."""
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    v = np.arange(h)[:, None] - cy
    u = np.arange(w)[None, :] - cx
    cos, sin = np.cos(theta), np.sin(theta)
    src_r = cy - u * sin + v * cos
    src_c = cx + u * cos + v * sin
    return src_r, src_c


def _gather_exact(plane, src_r, src_c):
    h, w = plane.shape
    valid = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.zeros_like(plane)
    out[valid] = plane[src_r[valid], src_c[valid]]
    return out


def rotate_plane(plane: np.ndarray, angle_deg: float,
                 nearest: bool = False) -> np.ndarray:
    """Rotates one [h, w] plane; out-of-support pixels become 0."""
    h, w = plane.shape
    angle = float(angle_deg) % 360.0
    if angle == int(angle) and int(angle) % 90 == 0:
        grids = _right_angle_grids(h, w, int(angle))
        if grids is not None:
            return _gather_exact(plane, *grids)
    src_r, src_c = _float_grids(h, w, angle)
    if nearest:
        ri = np.rint(src_r).astype(np.int64)
        ci = np.rint(src_c).astype(np.int64)
        valid = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        out = np.zeros_like(plane)
        out[valid] = plane[ri[valid], ci[valid]]
        return out
    valid = (src_r >= 0) & (src_r <= h - 1) & (src_c >= 0) & (src_c <= w - 1)
    r0 = np.clip(np.floor(src_r).astype(np.int64), 0, h - 2)
    c0 = np.clip(np.floor(src_c).astype(np.int64), 0, w - 2)
    fr = src_r - r0
    fc = src_c - c0
    p = plane.astype(np.float64)
    out = ((1 - fr) * (1 - fc) * p[r0, c0] + (1 - fr) * fc * p[r0, c0 + 1]
           + fr * (1 - fc) * p[r0 + 1, c0] + fr * fc * p[r0 + 1, c0 + 1])
    out[~valid] = 0.0
    return out.astype(plane.dtype, copy=False)


def rotate_sample(sample: Sample, angle_deg: float) -> tuple[
        np.ndarray, np.ndarray, np.ndarray]:
    image = np.stack([rotate_plane(ch, angle_deg) for ch in sample.image.data])
    label = rotate_plane(sample.label, angle_deg, nearest=True)
    fov = rotate_plane(sample.fov, angle_deg, nearest=True)
    return np.ascontiguousarray(image), label, fov


# ---------------------------------------------------------------------------
# augmentation plans


@dataclass(frozen=True)
class AugmentPlan:
    rotation_step: int = 1
    brightness_count: int = 20
    brightness_low: float = 0.8
    brightness_high: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.rotation_step < 1 or 360 % self.rotation_step:
            raise ValueError(
                f"rotation step {self.rotation_step} does not divide 360")
        if self.brightness_count < 0:
            raise ValueError("brightness count must be >= 0")
        if not 0.0 < self.brightness_low <= self.brightness_high:
            raise ValueError(
                f"bad brightness range [{self.brightness_low}, "
                f"{self.brightness_high}]")

    @property
    def per_image(self) -> int:
        return 360 // self.rotation_step + self.brightness_count


@dataclass(frozen=True)
class AugmentRef:
    source_index: int
    aug_id: str
    kind: str  # "rotate" | "brighten"
    amount: float


def _sample_rng(plan_seed: int, sample_id: str) -> np.random.Generator:
    # per-sample stream keyed off the id, so parallel order cannot matter
    return np.random.default_rng([plan_seed, zlib.crc32(sample_id.encode())])


def expand_plan(samples: Sequence[Sample], plan: AugmentPlan
                ) -> list[AugmentRef]:
    """Realizes every augmentation descriptor (angles and seeded brightness
    factors) without touching pixels."""
    refs = []
    for si, s in enumerate(samples):
        for angle in range(0, 360, plan.rotation_step):
            refs.append(AugmentRef(si, f"{s.id}_r{angle:03d}", "rotate",
                                   float(angle)))
        rng = _sample_rng(plan.seed, s.id)
        factors = rng.uniform(plan.brightness_low, plan.brightness_high,
                              plan.brightness_count)
        for k, f in enumerate(factors):
            refs.append(AugmentRef(si, f"{s.id}_b{k:02d}", "brighten",
                                   float(f)))
    return refs


def apply_augmentation(sample: Sample, ref: AugmentRef) -> Sample:
    if ref.kind == "rotate":
        if ref.amount == 0.0:
            return replace(sample, id=ref.aug_id)
        image, label, fov = rotate_sample(sample, ref.amount)
        out = Sample(Tensor(image), label, fov, ref.aug_id, sample.orig_hw)
    elif ref.kind == "brighten":
        if ref.amount == 1.0:
            return replace(sample, id=ref.aug_id)
        image = np.clip(sample.image.data * np.float32(ref.amount), 0.0, 1.0)
        out = Sample(Tensor(image), sample.label.copy(), sample.fov.copy(),
                     ref.aug_id, sample.orig_hw)
    else:
        raise ValueError(f"unknown augmentation kind {ref.kind!r}")
    out.validate()
    return out


def augment(samples: Sequence[Sample], plan: AugmentPlan) -> Iterator[Sample]:
    for ref in expand_plan(samples, plan):
        yield apply_augmentation(samples[ref.source_index], ref)


class AugmentedSamples(Sequence):
    """Lazy augmented view: realizes one sample per access, since the full
    default DRIVE plan would not fit in memory."""

    def __init__(self, samples: Sequence[Sample], plan: AugmentPlan):
        self._samples = list(samples)
        self._refs = expand_plan(self._samples, plan)

    def __len__(self) -> int:
        return len(self._refs)

    def __getitem__(self, i: int) -> Sample:
        ref = self._refs[i]
        return apply_augmentation(self._samples[ref.source_index], ref)
