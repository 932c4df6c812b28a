"""Point-cloud and mesh geometry preprocessing.

Canonicalization, random downsampling, ratio masking, Gaussian perturbation,
edge extraction and statistical outlier removal. All randomized operations
are pure functions of (input, rng state).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError, ShapeError
from .meshio import Mesh

CANONICAL_EXTENT = 0.9  # keeps targets inside the tanh output range with margin


@dataclass
class CanonicalTransform:
    """Shift + uniform scale applied by canonicalize; invertible."""
    offset: np.ndarray   # centroid subtracted before scaling
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.offset


def canonicalize(mesh: Mesh) -> tuple[Mesh, CanonicalTransform]:
    """Shift to zero centroid, scale so max |coordinate| == 0.9."""
    verts = mesh.vertices
    if len(verts) < 1:
        raise DegenerateInputError("canonicalize: empty mesh")
    offset = verts.mean(axis=0)
    extent = np.abs(verts - offset).max()
    if extent == 0.0:
        raise DegenerateInputError("canonicalize: all vertices identical")
    t = CanonicalTransform(offset=offset, scale=CANONICAL_EXTENT / extent)
    return mesh.with_vertices(t.apply(verts)), t


def downsample_indices(n: int, factor: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted uniformly-random index subset of size floor(n / factor)."""
    if factor not in (1, 2, 4):
        raise ShapeError(f"downsample: factor must be 1, 2 or 4, got {factor}")
    if n < factor:
        raise ShapeError(f"downsample: need at least {factor} points, got {n}")
    if factor == 1:
        return np.arange(n)
    keep = n // factor
    return np.sort(rng.choice(n, size=keep, replace=False))


def downsample(points: np.ndarray, factor: int, rng: np.random.Generator) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points[downsample_indices(len(points), factor, rng)]


def mask_indices(n: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted index subset keeping max(1, round(n * (1 - ratio))) points.

    `ratio` is the masked fraction: 0 keeps everything.
    """
    if not 0.0 <= ratio < 1.0:
        raise ShapeError(f"mask: ratio must be in [0, 1), got {ratio}")
    if ratio == 0.0:
        return np.arange(n)
    keep = max(1, int(round(n * (1.0 - ratio))))
    return np.sort(rng.choice(n, size=keep, replace=False))


def mask(points: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points[mask_indices(len(points), ratio, rng)]


def add_gaussian_noise(points: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ShapeError(f"add_gaussian_noise: sigma must be >= 0, got {sigma}")
    points = np.asarray(points, dtype=np.float64)
    if sigma == 0.0:
        return points.copy()
    return points + rng.normal(0.0, sigma, size=points.shape)


def knn_mean_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each point to its k nearest neighbors."""
    points = np.asarray(points, dtype=np.float64)
    tree = cKDTree(points)
    dists, _ = tree.query(points, k=k + 1)  # first hit is the point itself
    return dists[:, 1:].mean(axis=1)


def sor(points: np.ndarray, k: int = 2, alpha: float = 1.1) -> tuple[np.ndarray, np.ndarray]:
    """Statistical outlier removal.

    Drops points whose mean k-NN distance exceeds mean + alpha * std over all
    points. Returns (kept points, removed indices).
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n <= k:
        raise ShapeError(f"sor: need more than k={k} points, got {n}")
    d = knn_mean_distances(points, k)
    threshold = d.mean() + alpha * d.std()
    removed = np.nonzero(d > threshold)[0]
    keep = np.setdiff1d(np.arange(n), removed)
    return points[keep], removed


def edges_of(mesh: Mesh) -> np.ndarray:
    """Unique undirected edges (i < j) of a triangle mesh, shape (E, 2)."""
    if mesh.faces is None or len(mesh.faces) == 0:
        raise DegenerateInputError("edges_of: mesh has no faces")
    f = mesh.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def edge_lengths(vertices: np.ndarray, edges: np.ndarray) -> np.ndarray:
    diff = vertices[edges[:, 0]] - vertices[edges[:, 1]]
    return np.sqrt((diff * diff).sum(axis=1))
