"""On-the-fly adversarial pose-sample generation.

Gradient ascent on the transfer error of a frozen model, via the FGM family
(single-step, iterative, momentum-iterative, random-start projected), with
optional statistical outlier removal to discard easy samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .errors import DegenerateGradientError, ShapeError
from .geometry import sor
from .losses import f_adv
from .meshio import Mesh
from .model import ModelParams, forward_tensor

METHODS = ("fgm", "ifgm", "mifgm", "pgd")
STEP_RULES = ("raw-grad", "sign", "l2-normalized")
NORMS = ("l2", "linf")


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgm"
    eps: float = 0.08
    iterations: int = 10
    momentum: float = 0.1        # mifgm only
    step_rule: str = "sign"
    norm: str = "l2"             # projection norm for iterative methods
    random_init: bool = False    # pgd only
    apply_sor: bool = True
    sor_k: int = 2
    sor_alpha: float = 1.1
    delta_adv: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ShapeError(f"unknown attack method {self.method!r}")
        if self.step_rule not in STEP_RULES:
            raise ShapeError(f"unknown step rule {self.step_rule!r}")
        if self.norm not in NORMS:
            raise ShapeError(f"unknown projection norm {self.norm!r}")
        if self.eps < 0:
            raise ShapeError(f"eps must be >= 0, got {self.eps}")
        if self.iterations < 1:
            raise ShapeError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ShapeError(f"momentum must be in [0, 1], got {self.momentum}")


@dataclass
class AdversarialResult:
    points: np.ndarray
    perturbation_norm: float
    removed_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    excessive_perturbation: bool = False


def input_gradient(params: ModelParams, pose_points: np.ndarray, id_mesh: Mesh,
                   gt_vertices: np.ndarray, delta: float = 1e-8) -> np.ndarray:
    """Gradient of the adversarial objective w.r.t. pose coordinates, (N, 3).

    The model runs in evaluation mode (no masking) on detached parameters, so
    no gradient ever reaches the trainable parameters.
    """
    pose_t = Tensor(np.asarray(pose_points, dtype=np.float64).T[None].copy(),
                    requires_grad=True)
    id_t = Tensor(id_mesh.vertices.T[None])
    out = forward_tensor(pose_t, id_t, params.detached(), phi=0.0, training=False)
    loss = f_adv(out, Tensor(np.asarray(gt_vertices, dtype=np.float64).T[None]), delta)
    loss.backward()
    return pose_t.grad[0].T.copy()


def _ascent_direction(params, pose, id_mesh, gt, delta):
    # f_adv falls as the error grows, so descending it means -grad
    return -input_gradient(params, pose, id_mesh, gt, delta)


def _apply_rule(direction: np.ndarray, rule: str, magnitude: float) -> np.ndarray:
    if rule == "raw-grad":
        return magnitude * direction
    if np.all(direction == 0.0):
        raise DegenerateGradientError(f"zero gradient field under step rule {rule!r}")
    if rule == "sign":
        return magnitude * np.sign(direction)
    return magnitude * direction / np.linalg.norm(direction)


def _project(delta: np.ndarray, eps: float, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.clip(delta, -eps, eps)
    n = np.linalg.norm(delta)
    if n > eps:
        return delta * (eps / n)
    return delta


def fgm(params: ModelParams, pose_points: np.ndarray, id_mesh: Mesh,
        gt_vertices: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Single-step attack: one gradient, one perturbation of magnitude eps."""
    pose_points = np.asarray(pose_points, dtype=np.float64)
    d = _ascent_direction(params, pose_points, id_mesh, gt_vertices, cfg.delta_adv)
    if cfg.step_rule == "raw-grad" and np.all(d == 0.0):
        return pose_points.copy()
    return pose_points + _apply_rule(d, cfg.step_rule, cfg.eps)


def iterative_attack(params: ModelParams, pose_points: np.ndarray, id_mesh: Mesh,
                     gt_vertices: np.ndarray, cfg: AttackConfig,
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """IFGM/MIFGM/PGD: eps/T steps projected back into the eps-ball."""
    pose_points = np.asarray(pose_points, dtype=np.float64)
    x = pose_points.copy()
    if cfg.method == "pgd" and cfg.random_init:
        rng = rng if rng is not None else np.random.default_rng(0)
        init = rng.uniform(-cfg.eps, cfg.eps, size=x.shape)
        x = pose_points + _project(init, cfg.eps, cfg.norm)
    step = cfg.eps / cfg.iterations
    m = np.zeros_like(x)
    for _ in range(cfg.iterations):
        d = _ascent_direction(params, x, id_mesh, gt_vertices, cfg.delta_adv)
        if cfg.method == "mifgm":
            l1 = np.abs(d).sum()
            if l1 == 0.0:
                raise DegenerateGradientError("zero gradient field in mifgm")
            m = cfg.momentum * m + d / l1
            delta_step = _apply_rule(m, "sign", step)
        else:
            if cfg.step_rule == "raw-grad" and np.all(d == 0.0):
                delta_step = np.zeros_like(d)
            else:
                delta_step = _apply_rule(d, cfg.step_rule, step)
        x = pose_points + _project(x + delta_step - pose_points, cfg.eps, cfg.norm)
    return x


def generate_adversarial(params: ModelParams, pose_points: np.ndarray, id_mesh: Mesh,
                         gt_vertices: np.ndarray, cfg: AttackConfig,
                         rng: np.random.Generator | None = None) -> AdversarialResult:
    """Run the configured attack, then optionally SOR-filter the result."""
    pose_points = np.asarray(pose_points, dtype=np.float64)
    if cfg.method == "fgm":
        adv = fgm(params, pose_points, id_mesh, gt_vertices, cfg)
    else:
        adv = iterative_attack(params, pose_points, id_mesh, gt_vertices, cfg, rng)
    delta = adv - pose_points
    pert = float(np.abs(delta).max() if cfg.norm == "linf" else np.linalg.norm(delta))
    removed = np.empty(0, dtype=np.int64)
    if cfg.apply_sor:
        adv, removed = sor(adv, cfg.sor_k, cfg.sor_alpha)
    return AdversarialResult(
        points=adv,
        perturbation_norm=pert,
        removed_indices=removed,
        excessive_perturbation=len(removed) > 0.5 * len(pose_points),
    )
