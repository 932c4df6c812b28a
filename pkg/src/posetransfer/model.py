"""The pose-transfer network.

Multi-scale masked point encoder, four channel-wise attention decoder blocks
with mesh-conditioned adaptive instance normalization, and a tanh coordinate
head. Widths are configurable for testing; defaults follow the reference
architecture (encoder 3->64->128->1024, decoders 1024/512/512/256).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CanonicalRangeError, DegenerateInputError, ShapeError
from .archive import read_archive, write_archive
from .geometry import downsample_indices, mask_indices
from .meshio import Mesh

SCALE_FACTORS = (1, 2, 4)


@dataclass(frozen=True)
class ModelConfig:
    encoder_channels: tuple[int, ...] = (64, 128, 1024)
    decoder_widths: tuple[int, ...] = (1024, 512, 512, 256)
    norm_eps: float = 1e-5

    def __post_init__(self):
        if len(self.encoder_channels) != 3 or len(self.decoder_widths) != 4:
            raise ShapeError(
                "model config needs 3 encoder channels and 4 decoder widths, "
                f"got {self.encoder_channels} / {self.decoder_widths}"
            )


class ModelParams:
    """All learnable parameters, addressable by stable names."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def named(self) -> dict[str, Tensor]:
        return self.params

    def count(self) -> int:
        return sum(p.values.size for p in self.params.values())

    def detached(self) -> "ModelParams":
        """Read-only view with no gradient tracking; shares value buffers."""
        return ModelParams(self.cfg, {k: p.detach() for k, p in self.params.items()})

    def save(self, path):
        meta = {
            "encoder_channels": ",".join(str(c) for c in self.cfg.encoder_channels),
            "decoder_widths": ",".join(str(w) for w in self.cfg.decoder_widths),
            "norm_eps": repr(self.cfg.norm_eps),
        }
        write_archive(path, {k: p.values for k, p in self.params.items()}, meta)

    @staticmethod
    def load(path) -> "ModelParams":
        arrays, meta = read_archive(path)
        cfg = ModelConfig(
            encoder_channels=tuple(int(c) for c in meta["encoder_channels"].split(",")),
            decoder_widths=tuple(int(w) for w in meta["decoder_widths"].split(",")),
            norm_eps=float(meta["norm_eps"]),
        )
        reference = init_params(cfg, np.random.default_rng(0))
        expected = {k: p.values.shape for k, p in reference.params.items()}
        got = {k: a.shape for k, a in arrays.items()}
        if expected != got:
            missing = set(expected) - set(got)
            extra = set(got) - set(expected)
            bad = {k for k in set(expected) & set(got) if expected[k] != got[k]}
            raise ShapeError(
                f"checkpoint does not match model: missing={sorted(missing)} "
                f"extra={sorted(extra)} shape-mismatch={sorted(bad)}"
            )
        params = {k: Tensor(arrays[k], requires_grad=True) for k in expected}
        return ModelParams(cfg, params)


def _linear(params, name, c_out, c_in, rng):
    # uniform(+-1/sqrt(fan_in)) for weights and biases; nonzero biases matter
    # because canonical meshes have zero vertex-mean, and with zero biases the
    # attention logits would start (and stay) at an exact zero-gradient point
    bound = 1.0 / np.sqrt(c_in)
    params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in)),
                                 requires_grad=True)
    params[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, size=c_out),
                                 requires_grad=True)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    params: dict[str, Tensor] = {}
    chain = (3,) + tuple(cfg.encoder_channels)
    for s in range(3):
        for l in range(3):
            _linear(params, f"enc.s{s}.l{l}", chain[l + 1], chain[l], rng)
    widths = cfg.decoder_widths
    proj_in = (cfg.encoder_channels[-1], widths[0], widths[1], widths[2])
    for d in range(4):
        _linear(params, f"proj{d}", widths[d], proj_in[d], rng)
        c = widths[d]
        for tag in ("q", "k", "v"):
            _linear(params, f"dec{d}.{tag}", c, c, rng)
        # gamma starts at 0 so the attention residual is the identity at init
        params[f"dec{d}.gamma"] = Tensor(np.zeros(()), requires_grad=True)
        _linear(params, f"dec{d}.lift", c, 3, rng)
        for s in range(3):
            _linear(params, f"dec{d}.sp{s}.scale", c, 3, rng)
            _linear(params, f"dec{d}.sp{s}.shift", c, 3, rng)
            _linear(params, f"dec{d}.sp{s}.conv", c, c, rng)
    _linear(params, "head", 3, widths[3], rng)
    return ModelParams(cfg, params)


def _conv(x, params, name):
    return ad.pointwise_linear(x, params[f"{name}.w"], params[f"{name}.b"])


def encode_multiscale(pose: Tensor, params: ModelParams, n_target: int,
                      phi: float, rng_down: np.random.Generator,
                      rng_mask: np.random.Generator | None = None,
                      training: bool = False) -> Tensor:
    """Pooled multi-scale pose code tiled to the target vertex count.

    `pose` is [B, 3, N]. Points are put in a coordinate-canonical order
    before subset sampling so the code is invariant to input point order.
    Masking applies only in training mode.
    """
    if pose.values.ndim != 3 or pose.shape[1] != 3:
        raise ShapeError(f"encode_multiscale: pose must be [B,3,N], got {pose.shape}")
    n = pose.shape[-1]
    if n < 4:
        raise DegenerateInputError(f"encode_multiscale: need at least 4 points, got {n}")
    pts = pose.values[0]
    order = np.lexsort((pts[2], pts[1], pts[0]))
    rng_mask = rng_mask if rng_mask is not None else rng_down
    pooled = None
    for s, factor in enumerate(SCALE_FACTORS):
        idx = order[downsample_indices(n, factor, rng_down)]
        if training and phi > 0.0:
            idx = idx[mask_indices(len(idx), phi, rng_mask)]
        x = ad.gather_last(pose, idx)
        for l in range(3):
            x = _conv(x, params, f"enc.s{s}.l{l}")
            x = ad.relu(ad.instance_norm(x, params.cfg.norm_eps))
        vec = ad.max_over_axis(x)
        pooled = vec if pooled is None else ad.add(pooled, vec)
    return ad.tile(pooled, n_target)


def channel_attention(z_id: Tensor, z_pose: Tensor, params: ModelParams, dec: int) -> Tensor:
    """Channel-wise cross attention: a [C,C] map refines the pose code.

    q comes from the identity code and k from the pose code. The value path
    reads the identity code as well: the pooled pose code is tiled, hence
    constant along the vertex axis, and a value path reading it would make
    the whole attention output constant too — which the downstream instance
    norm would erase, leaving the network blind to the pose input. Mixing
    per-vertex identity features through a pose-conditioned channel map keeps
    the pose signal alive. The gamma residual makes the block the identity
    at initialization.
    """
    if z_id.shape != z_pose.shape:
        raise ShapeError(f"channel_attention: width mismatch {z_id.shape} vs {z_pose.shape}")
    attn = channel_attention_map(z_id, z_pose, params, dec)
    v = _conv(z_id, params, f"dec{dec}.v")
    refined = ad.scale(ad.matmul_batched(attn, v), params[f"dec{dec}.gamma"])
    return ad.add(refined, z_pose)


def channel_attention_map(z_id: Tensor, z_pose: Tensor, params: ModelParams,
                          dec: int) -> Tensor:
    """The [B,C,C] channel-mixing map, rows summing to 1."""
    q = _conv(z_id, params, f"dec{dec}.q")
    k = _conv(z_pose, params, f"dec{dec}.k")
    # logits contract over the vertex axis as a mean, not a sum: raw sums over
    # hundreds of vertices saturate the softmax one-hot, freezing its gradient
    logits = ad.mul_scalar(ad.matmul_batched(q, ad.transpose_last2(k)),
                           1.0 / z_pose.shape[-1])
    return ad.softmax(logits, axis=-1)


def spadain(z: Tensor, id_mesh: Tensor, params: ModelParams, dec: int, block: int) -> Tensor:
    """Instance norm with per-vertex scale/shift predicted from the target mesh."""
    if z.shape[-1] != id_mesh.shape[-1]:
        raise ShapeError(
            f"spadain: vertex count mismatch {z.shape[-1]} vs {id_mesh.shape[-1]}"
        )
    norm = ad.instance_norm(z, params.cfg.norm_eps)
    s = _conv(id_mesh, params, f"dec{dec}.sp{block}.scale")
    b = _conv(id_mesh, params, f"dec{dec}.sp{block}.shift")
    return ad.add(ad.mul(s, norm), b)


def decoder_block(z_pose: Tensor, id_mesh: Tensor, params: ModelParams, dec: int) -> Tensor:
    z_id = _conv(id_mesh, params, f"dec{dec}.lift")
    z = channel_attention(z_id, z_pose, params, dec)
    h = z
    for block in (0, 1):
        h = spadain(h, id_mesh, params, dec, block)
        h = ad.relu(_conv(h, params, f"dec{dec}.sp{block}.conv"))
    skip = spadain(z, id_mesh, params, dec, 2)
    skip = ad.relu(_conv(skip, params, f"dec{dec}.sp2.conv"))
    return ad.add(h, skip)


def _check_canonical(points: np.ndarray, what: str):
    m = np.abs(points).max()
    if m > 1.0:
        raise CanonicalRangeError(
            f"{what} coordinates reach {m:.4g}; canonicalize inputs to [-1, 1] first"
        )


def forward_tensor(pose: Tensor, id_mesh: Tensor, params: ModelParams,
                   phi: float = 0.0, training: bool = False,
                   rng_down: np.random.Generator | None = None,
                   rng_mask: np.random.Generator | None = None) -> Tensor:
    """Full forward pass on tensors: pose [B,3,Np], id_mesh [B,3,N] -> [B,3,N]."""
    _check_canonical(pose.values, "pose")
    _check_canonical(id_mesh.values, "identity")
    if rng_down is None:
        rng_down = np.random.default_rng(0)
    n_target = id_mesh.shape[-1]
    x = encode_multiscale(pose, params, n_target, phi, rng_down, rng_mask, training)
    for d in range(4):
        x = _conv(x, params, f"proj{d}")
        x = decoder_block(x, id_mesh, params, d)
    return ad.tanh(_conv(x, params, "head"))


def forward(pose_points: np.ndarray, id_mesh: Mesh, params: ModelParams,
            phi: float = 0.0, training: bool = False,
            rng_down: np.random.Generator | None = None,
            rng_mask: np.random.Generator | None = None) -> tuple[Mesh, Tensor]:
    """Convenience wrapper taking a point array and a Mesh.

    Returns the transferred mesh (identity topology) and the output tensor
    for loss computation.
    """
    pose_t = Tensor(np.asarray(pose_points, dtype=np.float64).T[None])
    id_t = Tensor(id_mesh.vertices.T[None])
    out = forward_tensor(pose_t, id_t, params, phi, training, rng_down, rng_mask)
    return id_mesh.with_vertices(out.values[0].T), out
