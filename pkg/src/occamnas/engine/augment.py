"""Random horizontal flips and small rotations for training batches."""
from __future__ import annotations

import numpy as np


def rotate_batch(images, angles_deg):
    """Rotate each (h, w, ch) image counter-clockwise about its center.

    Nearest-neighbour sampling; source coordinates outside the image are
    clamped, which replicates the edge pixels.
    """
    images = np.asarray(images)
    n, h, w = images.shape[:3]
    theta = np.deg2rad(np.asarray(angles_deg, dtype=np.float64)).reshape(n, 1, 1)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    cos, sin = np.cos(theta), np.sin(theta)
    # inverse map: output (y, x) samples input at R(-theta)(y, x); y points down
    src_x = cos * cols - sin * rows
    src_y = sin * cols + cos * rows
    sy = np.clip(np.rint(src_y + cy), 0, h - 1).astype(np.intp)
    sx = np.clip(np.rint(src_x + cx), 0, w - 1).astype(np.intp)
    idx = np.arange(n).reshape(n, 1, 1)
    return images[idx, sy, sx]


def augment_batch(images, rng: np.random.Generator, rotation_degrees: float = 15.0,
                  hflip: bool = True, flip_prob: float = 0.5):
    images = np.asarray(images)
    n = len(images)
    out = images
    if hflip:
        flip = rng.random(n) < flip_prob
        if flip.any():
            out = out.copy()
            out[flip] = out[flip][:, :, ::-1, :]
    if rotation_degrees:
        angles = rng.uniform(-rotation_degrees, rotation_degrees, n)
        out = rotate_batch(out, angles)
    return out


def augment(image, rng: np.random.Generator, rotation_degrees: float = 15.0, hflip: bool = True,
            flip_prob: float = 0.5):
    """Augment a single (h, w, ch) image; output shape is unchanged."""
    return augment_batch(np.asarray(image)[None], rng, rotation_degrees, hflip, flip_prob)[0]
