"""Shared fixtures: synthetic samples and on-disk netpbm dataset trees."""

import numpy as np
import pytest

from rcnet import data, netpbm
from rcnet.tensor import Tensor


def make_sample(h=16, w=16, seed=0, sample_id="s0", full_fov=True):
    """Small in-memory sample with both classes present."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    stripes = np.sin(yy * 0.7 + xx * 0.4) > 0.55
    label = stripes.astype(np.uint8)
    image = (0.25 + 0.45 * label + 0.1 * rng.random((3, h, w))).astype(
        np.float32)
    image = np.clip(image, 0.0, 1.0)
    if full_fov:
        fov = np.ones((h, w), np.uint8)
    else:
        cy, cx = (h - 1) / 2, (w - 1) / 2
        fov = (((yy - cy) ** 2 + (xx - cx) ** 2)
               <= (0.45 * min(h, w)) ** 2).astype(np.uint8)
    s = data.Sample(Tensor(np.ascontiguousarray(image)), label, fov,
                    sample_id, (h, w))
    s.validate()
    return s


def _synthetic_planes(h, w, seed):
    """(rgb uint8 [h,w,3], label uint8 0/255, mask uint8 0/255)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.2 * np.sin(yy * 0.05) * np.cos(xx * 0.07)
    rgb = np.stack([
        np.clip(base + 0.05 * rng.random((h, w)), 0, 1),
        np.clip(base * 0.6 + 0.05 * rng.random((h, w)), 0, 1),
        np.clip(base * 0.4 + 0.05 * rng.random((h, w)), 0, 1),
    ], axis=2)
    vessels = (np.sin(yy * 0.15 + xx * 0.1) > 0.8).astype(np.uint8)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    disk = (((yy - cy) / (0.48 * h)) ** 2
            + ((xx - cx) / (0.48 * w)) ** 2) <= 1.0
    rgb[~disk] = 0.02  # dark surround like a fundus photograph
    return (np.rint(rgb * 255).astype(np.uint8),
            vessels * np.uint8(255),
            disk.astype(np.uint8) * np.uint8(255))


def write_triplet_dir(root, ids, hw, seed0=0, with_masks=True):
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    if with_masks:
        (root / "masks").mkdir()
    for k, sid in enumerate(ids):
        rgb, label, mask = _synthetic_planes(*hw, seed=seed0 + k)
        netpbm.write_ppm(root / "images" / f"{sid}.ppm", rgb)
        netpbm.write_pgm(root / "labels" / f"{sid}.pgm", label)
        if with_masks:
            netpbm.write_pgm(root / "masks" / f"{sid}.pgm", mask)


@pytest.fixture(scope="session")
def drive_root(tmp_path_factory):
    """Synthetic DRIVE-shaped tree: 20 train + 20 test at 584x565."""
    root = tmp_path_factory.mktemp("drive")
    write_triplet_dir(root / "train", [f"t{i:02d}" for i in range(1, 21)],
                      data.DRIVE_HW, seed0=100)
    write_triplet_dir(root / "test", [f"e{i:02d}" for i in range(1, 21)],
                      data.DRIVE_HW, seed0=200)
    return root


@pytest.fixture(scope="session")
def stare_root(tmp_path_factory):
    """Synthetic STARE-shaped tree: 20 images at 605x700, no masks."""
    root = tmp_path_factory.mktemp("stare")
    write_triplet_dir(root, [f"im{i:04d}" for i in range(1, 21)],
                      data.STARE_HW, seed0=300, with_masks=False)
    return root
