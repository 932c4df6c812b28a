"""Training objectives and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateInputError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 1.0
    lambda_edge: float = 0.0005
    delta_adv: float = 1e-8

    def __post_init__(self):
        if self.lambda_edge < 0:
            raise ShapeError(f"lambda_edge must be >= 0, got {self.lambda_edge}")
        if self.delta_adv <= 0:
            raise ShapeError(f"delta_adv must be > 0, got {self.delta_adv}")


def _as_bcn(x) -> Tensor:
    """Accept [B,3,N] tensors or (N,3) vertex arrays."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64).T[None])


def _check_counts(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: vertex count mismatch {a.shape} vs {b.shape}")


def l_rec(result, gt) -> Tensor:
    """Mean per-vertex squared L2 distance, differentiable w.r.t. result."""
    result = _as_bcn(result)
    gt = _as_bcn(gt)
    _check_counts(result, gt, "l_rec")
    n = result.shape[-1]
    d = ad.sub(result, gt)
    return ad.mul_scalar(ad.sum_all(ad.mul(d, d)), 1.0 / n)


def l_edge(result, gt, edges: np.ndarray) -> Tensor:
    """Mean squared difference of edge lengths against the ground truth."""
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size == 0:
        raise DegenerateInputError("l_edge: empty edge set")
    result = _as_bcn(result)
    gt_arr = gt.values[0].T if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if result.shape[-1] != len(gt_arr):
        raise ShapeError(f"l_edge: vertex count mismatch {result.shape[-1]} vs {len(gt_arr)}")
    diff = ad.sub(ad.gather_last(result, edges[:, 0]), ad.gather_last(result, edges[:, 1]))
    lengths = ad.sqrt(ad.sum_over_axis(ad.mul(diff, diff), axis=1))  # [B,E]
    gt_diff = gt_arr[edges[:, 0]] - gt_arr[edges[:, 1]]
    gt_lengths = Tensor(np.sqrt((gt_diff * gt_diff).sum(axis=1))[None])
    delta = ad.sub(lengths, gt_lengths)
    return ad.mul_scalar(ad.sum_all(ad.mul(delta, delta)), 1.0 / len(edges))


def l_full(result, gt, edges: np.ndarray | None, weights: LossWeights = LossWeights()) -> Tensor:
    loss = l_rec(result, gt)
    if weights.lambda_edge > 0.0 and edges is not None:
        loss = ad.add(loss, ad.mul_scalar(l_edge(result, gt, edges), weights.lambda_edge))
    return loss


def pmd(result, gt) -> float:
    """Point-wise mean squared Euclidean distance (non-differentiable path).

    Numerically identical to l_rec; summaries report it in 1e-4 units.
    """
    r = result.values[0].T if isinstance(result, Tensor) else np.asarray(result, dtype=np.float64)
    g = gt.values[0].T if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    if r.shape != g.shape:
        raise ShapeError(f"pmd: vertex count mismatch {r.shape} vs {g.shape}")
    d = np.ascontiguousarray((r - g).T)  # channel-major, same order as l_rec's reduction
    return float(np.sum(d * d) * (1.0 / r.shape[0]))


def f_adv(result, gt, delta: float = 1e-8) -> Tensor:
    """Inverse reconstruction error; minimizing it pushes output off the target."""
    if delta <= 0:
        raise ShapeError(f"f_adv: delta must be > 0, got {delta}")
    return ad.reciprocal(l_rec(result, gt) + delta)


def f_adv_exponential(result, gt) -> Tensor:
    """Rejected alternative: exp(-error).

    Kept only as a test fixture; its gradient collapses at large transfer
    error, which is why the inverse form is used instead.
    """
    return ad.exp(ad.mul_scalar(l_rec(result, gt), -1.0))
