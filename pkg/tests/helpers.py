"""Small scene builders shared by several test modules."""

import numpy as np

from detfusion.geometry import AABB


def random_scene(rng, n_objects, size=200.0):
    """Non-overlapping-ish ground truth boxes with a couple of labels."""
    truth = []
    for k in range(n_objects):
        w, h = rng.uniform(20, 50, 2)
        x, y = rng.uniform(0, size - 50, 2)
        truth.append((AABB.from_coords(x, y, x + w, y + h), ("car", "person")[k % 2]))
    return truth


def spread_scene(n_objects, spacing=120.0, w=40.0, h=30.0):
    """Objects on a diagonal, far enough apart that grouping is unambiguous."""
    return [(AABB.from_coords(k * spacing, k * spacing, k * spacing + w, k * spacing + h), "car")
            for k in range(n_objects)]


def seeded(seed):
    return np.random.default_rng(seed)
