"""Plain-text artifact formats: field dumps, observation files, manifests.

Every numeric value is written with 17 significant digits so dumps round-trip
bit-exactly through float64.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["save_field", "load_field", "save_observations", "load_observations",
           "save_manifest", "sha256_text"]


def save_field(path, arr, names):
    """Header `ni nj m names...`, then one row-major line of m values per cell."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        arr = arr[..., None]
    ni, nj, m = arr.shape
    if len(names) != m:
        raise ValueError(f"{len(names)} names for {m} variables")
    with open(path, "w") as f:
        f.write(f"{ni} {nj} {m} {' '.join(names)}\n")
        for i in range(ni):
            for j in range(nj):
                f.write(" ".join("%.17g" % v for v in arr[i, j]) + "\n")


def load_field(path):
    with open(path) as f:
        head = f.readline().split()
        ni, nj, m = int(head[0]), int(head[1]), int(head[2])
        names = head[3:3 + m]
        arr = np.zeros((ni, nj, m))
        for i in range(ni):
            for j in range(nj):
                arr[i, j] = [float(t) for t in f.readline().split()]
    return arr, names


def save_observations(path, points, values):
    """Self-describing lines `var i j value` in point order."""
    values = np.asarray(values, dtype=float).ravel()
    if len(points) != values.size:
        raise ValueError("points/values length mismatch")
    with open(path, "w") as f:
        for (var, i, j), v in zip(points, values):
            f.write("%s %d %d %.17g\n" % (var, i, j, v))


def load_observations(path):
    points, values = [], []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            var, i, j, v = line.split()
            points.append((var, int(i), int(j)))
            values.append(float(v))
    return points, np.asarray(values)


def sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_manifest(path, entries):
    with open(path, "w") as f:
        for k in sorted(entries):
            f.write(f"{k} = {entries[k]}\n")
