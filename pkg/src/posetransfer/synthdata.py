"""Procedural articulated tube-figure dataset.

Five limbs (torso, two arms, two legs), each a two-segment joint chain swept
with a fixed-topology tube. Shape (radii, lengths) and pose (joint angles)
are separable, so the exact ground truth for any transfer is available by
construction: transfer(pose_A -> identity_B) == figure(shape_B, pose_A).

Joint rotations act about the z axis for torso and legs and about the y axis
for arms; every rotation axis and attachment is invariant under the x -> -x
reflection, so negating every joint angle mirrors the figure across the x=0
plane (each limb maps onto itself).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .geometry import canonicalize
from .meshio import Mesh

LIMBS = ("torso", "arm_l", "arm_r", "leg_l", "leg_r")
JOINTS_PER_LIMB = 2
RADIUS_RANGE = (0.05, 0.15)
LENGTH_RANGE = (0.3, 0.6)
ANGLE_RANGE = (-np.pi / 2, np.pi / 2)


@dataclass(frozen=True)
class FigureSpec:
    rings_per_limb: int = 8
    vertices_per_ring: int = 8

    @property
    def vertex_count(self) -> int:
        return len(LIMBS) * self.rings_per_limb * self.vertices_per_ring


def _check_range(values, lo, hi, what):
    values = np.asarray(values, dtype=np.float64)
    if values.min() < lo or values.max() > hi:
        raise ShapeError(f"{what} out of range [{lo:.4g}, {hi:.4g}]")
    return values


def _rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skeleton_chains(shape: np.ndarray, pose: np.ndarray) -> list[np.ndarray]:
    """Per-limb polylines of joint positions (3 points each: base, mid, tip).

    shape: (5, 2) per-limb (radius, length); pose: (5, 2) per-joint angles.
    """
    shape = np.asarray(shape, dtype=np.float64).reshape(len(LIMBS), 2)
    pose = np.asarray(pose, dtype=np.float64).reshape(len(LIMBS), JOINTS_PER_LIMB)
    radii, lengths = shape[:, 0], shape[:, 1]
    _check_range(radii, *RADIUS_RANGE, what="limb radius")
    _check_range(lengths, *LENGTH_RANGE, what="limb length")
    _check_range(pose, *ANGLE_RANGE, what="joint angle")

    def chain(base, direction, rot, length, angles):
        pts = [np.asarray(base, dtype=np.float64)]
        total = 0.0
        for k in range(JOINTS_PER_LIMB):
            total += angles[k]
            seg = rot(total) @ direction
            pts.append(pts[-1] + seg * (length / JOINTS_PER_LIMB))
        return np.array(pts)

    r_t = radii[0]
    torso = chain((0.0, 0.0, 0.0), np.array([0.0, 1.0, 0.0]), _rot_z, lengths[0], pose[0])
    top, bottom = torso[-1], torso[0]
    chains = [torso]
    for side, sign in (("arm_l", 1.0), ("arm_r", -1.0)):
        i = LIMBS.index(side)
        chains.append(chain(top + np.array([0.0, 0.0, sign * r_t]),
                            np.array([0.0, 0.0, sign]), _rot_y, lengths[i], pose[i]))
    for side, sign in (("leg_l", 1.0), ("leg_r", -1.0)):
        i = LIMBS.index(side)
        chains.append(chain(bottom + np.array([0.0, 0.0, sign * r_t * 0.7]),
                            np.array([0.0, -1.0, 0.0]), _rot_z, lengths[i], pose[i]))
    return chains


def generate_figure(shape: np.ndarray, pose: np.ndarray,
                    spec: FigureSpec = FigureSpec(), name: str = "") -> Mesh:
    """Deterministic canonicalized tube mesh for (shape, pose)."""
    shape = np.asarray(shape, dtype=np.float64).reshape(len(LIMBS), 2)
    chains = skeleton_chains(shape, pose)
    rings, vpr = spec.rings_per_limb, spec.vertices_per_ring
    x_hat = np.array([1.0, 0.0, 0.0])
    y_hat = np.array([0.0, 1.0, 0.0])
    phis = 2.0 * np.pi * np.arange(vpr) / vpr
    verts = []
    faces = []
    for limb, chain in enumerate(chains):
        radius = shape[limb, 0]
        base = limb * rings * vpr
        seg_dirs = [chain[k + 1] - chain[k] for k in range(JOINTS_PER_LIMB)]
        seg_dirs = [d / np.linalg.norm(d) for d in seg_dirs]
        for j in range(rings):
            t = j / (rings - 1)
            arc = t * JOINTS_PER_LIMB
            seg = min(int(arc), JOINTS_PER_LIMB - 1)
            center = chain[seg] + (arc - seg) * (chain[seg + 1] - chain[seg])
            d = seg_dirs[seg]
            u = np.cross(d, x_hat)
            if np.linalg.norm(u) < 1e-12:
                u = np.cross(d, y_hat)
            u /= np.linalg.norm(u)
            w = np.cross(d, u)
            ring = center + radius * (np.cos(phis)[:, None] * u
                                      + np.sin(phis)[:, None] * w)
            verts.append(ring)
        for j in range(rings - 1):
            for k in range(vpr):
                a = base + j * vpr + k
                b = base + j * vpr + (k + 1) % vpr
                c = base + (j + 1) * vpr + (k + 1) % vpr
                e = base + (j + 1) * vpr + k
                faces.append((a, b, c))
                faces.append((a, c, e))
    mesh = Mesh(np.concatenate(verts), np.array(faces), name=name)
    canonical, _ = canonicalize(mesh)
    return canonical


def zero_pose() -> np.ndarray:
    return np.zeros((len(LIMBS), JOINTS_PER_LIMB))


def sample_shape(rng: np.random.Generator) -> np.ndarray:
    radii = rng.uniform(*RADIUS_RANGE, size=len(LIMBS))
    lengths = rng.uniform(*LENGTH_RANGE, size=len(LIMBS))
    return np.stack([radii, lengths], axis=1)


def sample_pose(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(*ANGLE_RANGE, size=(len(LIMBS), JOINTS_PER_LIMB))


@dataclass(frozen=True)
class DatasetConfig:
    train_identities: int = 16
    train_poses: int = 40
    test_identities: int = 4
    unseen_poses: int = 20
    rings_per_limb: int = 8
    vertices_per_ring: int = 8

    def __post_init__(self):
        for name in ("train_identities", "train_poses", "test_identities", "unseen_poses"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")

    @property
    def figure_spec(self) -> FigureSpec:
        return FigureSpec(self.rings_per_limb, self.vertices_per_ring)


@dataclass
class DatasetSplit:
    cfg: DatasetConfig
    train_shapes: np.ndarray    # (n_train_id, 5, 2)
    test_shapes: np.ndarray     # (n_test_id, 5, 2)
    train_poses: np.ndarray     # (n_train_pose, 5, 2)
    unseen_poses: np.ndarray    # (n_unseen_pose, 5, 2)
    # figures are deterministic in (shape, pose), so index-addressed requests
    # are memoized; callers treat returned meshes as immutable
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def identity_mesh(self, shape: np.ndarray, name: str = "") -> Mesh:
        return generate_figure(shape, zero_pose(), self.cfg.figure_spec, name)

    def triple(self, carrier_shape, target_shape, pose) -> tuple[Mesh, Mesh, Mesh]:
        """(pose source, identity, ground truth) meshes."""
        spec = self.cfg.figure_spec
        return (generate_figure(carrier_shape, pose, spec),
                self.identity_mesh(target_shape),
                generate_figure(target_shape, pose, spec))

    def _figure(self, shape_split, shape_idx, pose_split, pose_idx) -> Mesh:
        key = (shape_split, shape_idx, pose_split, pose_idx)
        mesh = self._cache.get(key)
        if mesh is None:
            shapes = self.train_shapes if shape_split == "train" else self.test_shapes
            if pose_split == "zero":
                pose = zero_pose()
            else:
                pose = (self.train_poses if pose_split == "train"
                        else self.unseen_poses)[pose_idx]
            mesh = generate_figure(shapes[shape_idx], pose, self.cfg.figure_spec)
            self._cache[key] = mesh
        return mesh

    def train_triple(self, carrier_idx: int, identity_idx: int, pose_idx: int):
        return (self._figure("train", carrier_idx, "train", pose_idx),
                self._figure("train", identity_idx, "zero", -1),
                self._figure("train", identity_idx, "train", pose_idx))

    def test_triple(self, identity_idx: int, pose_idx: int, unseen: bool):
        pose_split = "unseen" if unseen else "train"
        # pose carrier is a fixed training identity: deterministic test pairs
        carrier = pose_idx % len(self.train_shapes)
        return (self._figure("train", carrier, pose_split, pose_idx),
                self._figure("test", identity_idx, "zero", -1),
                self._figure("test", identity_idx, pose_split, pose_idx))

    def test_pairs(self, unseen: bool) -> list[tuple[int, int]]:
        n_pose = len(self.unseen_poses) if unseen else len(self.train_poses)
        return [(i, p) for i in range(len(self.test_shapes)) for p in range(n_pose)]

    def to_json(self) -> str:
        return json.dumps({
            "config": {
                "train_identities": self.cfg.train_identities,
                "train_poses": self.cfg.train_poses,
                "test_identities": self.cfg.test_identities,
                "unseen_poses": self.cfg.unseen_poses,
                "rings_per_limb": self.cfg.rings_per_limb,
                "vertices_per_ring": self.cfg.vertices_per_ring,
            },
            "train_shapes": self.train_shapes.tolist(),
            "test_shapes": self.test_shapes.tolist(),
            "train_poses": self.train_poses.tolist(),
            "unseen_poses": self.unseen_poses.tolist(),
        }, indent=1, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DatasetSplit":
        raw = json.loads(text)
        return DatasetSplit(
            cfg=DatasetConfig(**raw["config"]),
            train_shapes=np.array(raw["train_shapes"]),
            test_shapes=np.array(raw["test_shapes"]),
            train_poses=np.array(raw["train_poses"]),
            unseen_poses=np.array(raw["unseen_poses"]),
        )


def make_dataset(cfg: DatasetConfig, rng: np.random.Generator) -> DatasetSplit:
    """Sample disjoint identity/pose parameter sets for all splits."""
    train_shapes = np.stack([sample_shape(rng) for _ in range(cfg.train_identities)])
    test_shapes = np.stack([sample_shape(rng) for _ in range(cfg.test_identities)])
    train_poses = np.stack([sample_pose(rng) for _ in range(cfg.train_poses)])
    unseen_poses = np.stack([sample_pose(rng) for _ in range(cfg.unseen_poses)])
    return DatasetSplit(cfg, train_shapes, test_shapes, train_poses, unseen_poses)
