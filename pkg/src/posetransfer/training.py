"""Two-stage training loop (clean then adversarial) and evaluation harness."""
from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, generate_adversarial
from .autodiff import no_grad
from .errors import DegenerateGradientError, ShapeError, TrainingDivergedError
from .geometry import edges_of
from .losses import LossWeights, l_edge, l_rec, pmd
from .model import ModelConfig, ModelParams, forward, init_params
from .optim import Adam
from .synthdata import DatasetSplit

PMD_SCALE = 1e4  # PMD is reported in 1e-4 units, as in the evaluation tables
METRICS_HEADER = "epoch,loss_rec,loss_edge,pmd_seen,pmd_unseen,pmd_adv"
STREAM_NAMES = ("pairing", "masking", "downsampling", "attack")


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Independent deterministic RNG stream derived from one master seed."""
    key = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


@dataclass
class TrainConfig:
    epochs: int = 40
    adversarial_start_epoch: int | None = None  # None -> epochs // 2
    lr: float = 5e-5
    batch: int = 4
    lambda_edge: float = 0.0005
    masking_ratio: float = 0.5
    seed: int = 0
    checkpoint_every: int = 10
    adv_use_edge: bool = True
    pairs_per_epoch: int | None = None  # None -> 1/6 of identity x pose grid
    eval_pairs: int = 16
    attack: AttackConfig = field(default_factory=AttackConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        start = self.adv_start
        if not 0 <= start <= self.epochs:
            raise ShapeError(
                f"adversarial_start_epoch {start} outside [0, {self.epochs}]"
            )

    @property
    def adv_start(self) -> int:
        if self.adversarial_start_epoch is None:
            return self.epochs // 2
        return self.adversarial_start_epoch


@dataclass
class EvalRow:
    split: str
    identity: int
    pose: int
    pmd: float
    pmd_adv: float | None = None


@dataclass
class EvalReport:
    """Per-sample PMD rows plus split means, all in 1e-4 units."""
    rows: list[EvalRow]

    def _stats(self, split: str, adv: bool = False):
        vals = [(r.pmd_adv if adv else r.pmd) for r in self.rows
                if r.split == split and (not adv or r.pmd_adv is not None)]
        if not vals:
            return None
        a = np.array(vals)
        return float(a.mean()), float(a.std())

    @property
    def pmd_seen(self):
        return self._stats("seen")

    @property
    def pmd_unseen(self):
        return self._stats("unseen")

    @property
    def pmd_adversarial(self):
        return self._stats("seen", adv=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", "identity", "pose", "pmd_x1e4", "pmd_adv_x1e4"])
        for r in self.rows:
            w.writerow([r.split, r.identity, r.pose, repr(r.pmd),
                        "" if r.pmd_adv is None else repr(r.pmd_adv)])
        for split in ("seen", "unseen"):
            s = self._stats(split)
            if s:
                w.writerow([f"{split}_mean", "", "", repr(s[0]), ""])
                w.writerow([f"{split}_std", "", "", repr(s[1]), ""])
        s = self.pmd_adversarial
        if s:
            w.writerow(["adversarial_mean", "", "", "", repr(s[0])])
            w.writerow(["adversarial_std", "", "", "", repr(s[1])])
        return buf.getvalue()


@dataclass
class EpochStats:
    loss_rec: float
    loss_edge: float
    skipped: int = 0
    mean_perturbation: float = 0.0


class Trainer:
    def __init__(self, dataset: DatasetSplit, cfg: TrainConfig,
                 out_dir: str | Path | None = None):
        self.dataset = dataset
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.params = init_params(cfg.model, named_stream(cfg.seed, "params"))
        self.opt = Adam(self.params.named(), lr=cfg.lr)
        self.streams = {n: named_stream(cfg.seed, n) for n in STREAM_NAMES}
        self.weights = LossWeights(lambda_edge=cfg.lambda_edge)
        # identity meshes share one fixed topology, so edges are precomputed
        self.edges = edges_of(dataset.identity_mesh(dataset.train_shapes[0]))
        self.epochs_done = 0
        self.metrics_rows: list[str] = []

    # -- pair sampling ----------------------------------------------------
    def _pairs_per_epoch(self) -> int:
        if self.cfg.pairs_per_epoch is not None:
            return self.cfg.pairs_per_epoch
        grid = len(self.dataset.train_shapes) * len(self.dataset.train_poses)
        return max(1, grid // 6)

    def _sample_pairs(self):
        rng = self.streams["pairing"]
        n_id = len(self.dataset.train_shapes)
        n_pose = len(self.dataset.train_poses)
        count = self._pairs_per_epoch()
        return [(int(rng.integers(n_id)), int(rng.integers(n_id)),
                 int(rng.integers(n_pose))) for _ in range(count)]

    # -- single epochs -----------------------------------------------------
    def _sample_loss(self, pose_points, id_mesh, gt_mesh, use_edge: bool):
        _, out = forward(pose_points, id_mesh, self.params,
                         phi=self.cfg.masking_ratio, training=True,
                         rng_down=self.streams["downsampling"],
                         rng_mask=self.streams["masking"])
        rec = l_rec(out, gt_mesh.vertices)
        if use_edge and self.weights.lambda_edge > 0.0:
            edge = l_edge(out, gt_mesh.vertices, self.edges)
            loss = rec + self.weights.lambda_edge * edge
        else:
            edge = None
            loss = rec
        return loss, rec.item(), 0.0 if edge is None else edge.item()

    def _run_epoch(self, adversarial: bool) -> EpochStats:
        cfg = self.cfg
        pairs = self._sample_pairs()
        rec_vals, edge_vals, pert_vals = [], [], []
        skipped = 0
        for start in range(0, len(pairs), cfg.batch):
            batch = pairs[start:start + cfg.batch]
            losses = []
            for a, b, p in batch:
                pose_m, id_m, gt_m = self.dataset.train_triple(a, b, p)
                pose_pts = pose_m.vertices
                if adversarial:
                    try:
                        result = generate_adversarial(
                            self.params, pose_pts, id_m, gt_m.vertices,
                            cfg.attack, self.streams["attack"])
                    except DegenerateGradientError:
                        skipped += 1
                        continue
                    pose_pts = result.points
                    pert_vals.append(result.perturbation_norm)
                    use_edge = cfg.adv_use_edge
                else:
                    use_edge = True
                loss, rec, edge = self._sample_loss(pose_pts, id_m, gt_m, use_edge)
                if not np.isfinite(rec):
                    norm = float(np.sqrt(sum(
                        np.sum(t.values**2) for t in self.params.named().values())))
                    raise TrainingDivergedError(
                        f"non-finite loss on batch {batch}; parameter norm {norm:.4g}")
                losses.append(loss)
                rec_vals.append(rec)
                edge_vals.append(edge)
            if not losses:
                continue
            total = losses[0] * (1.0 / len(losses))
            for extra in losses[1:]:
                total = total + extra * (1.0 / len(losses))
            total.backward()
            self.opt.step()
            self.opt.zero_grad()
        return EpochStats(
            loss_rec=float(np.mean(rec_vals)) if rec_vals else float("nan"),
            loss_edge=float(np.mean(edge_vals)) if edge_vals else 0.0,
            skipped=skipped,
            mean_perturbation=float(np.mean(pert_vals)) if pert_vals else 0.0,
        )

    def train_epoch_clean(self) -> EpochStats:
        return self._run_epoch(adversarial=False)

    def train_epoch_adversarial(self) -> EpochStats:
        return self._run_epoch(adversarial=True)

    # -- evaluation ---------------------------------------------------------
    def _eval_pair_pmd(self, pose_points, id_m, gt_m) -> float:
        with no_grad():
            mesh, _ = forward(pose_points, id_m, self.params, phi=0.0, training=False)
        return pmd(mesh.vertices, gt_m.vertices) * PMD_SCALE

    def _eval_subset_pairs(self, unseen: bool):
        n_id = len(self.dataset.test_shapes)
        poses = self.dataset.unseen_poses if unseen else self.dataset.train_poses
        return [(k % n_id, k % len(poses)) for k in range(self.cfg.eval_pairs)]

    def _epoch_metrics(self, epoch: int) -> tuple[float, float, float]:
        seen_vals, unseen_vals, adv_vals = [], [], []
        attack_rng = np.random.default_rng(
            np.random.SeedSequence(self.cfg.seed, spawn_key=(zlib.crc32(b"evalattack"), epoch)))
        for i, p in self._eval_subset_pairs(unseen=False):
            pose_m, id_m, gt_m = self.dataset.test_triple(i, p, unseen=False)
            seen_vals.append(self._eval_pair_pmd(pose_m.vertices, id_m, gt_m))
            adv = generate_adversarial(self.params, pose_m.vertices, id_m,
                                       gt_m.vertices, self.cfg.attack, attack_rng)
            adv_vals.append(self._eval_pair_pmd(adv.points, id_m, gt_m))
        for i, p in self._eval_subset_pairs(unseen=True):
            pose_m, id_m, gt_m = self.dataset.test_triple(i, p, unseen=True)
            unseen_vals.append(self._eval_pair_pmd(pose_m.vertices, id_m, gt_m))
        return (float(np.mean(seen_vals)), float(np.mean(unseen_vals)),
                float(np.mean(adv_vals)))

    def evaluate(self, attack_cfg: AttackConfig | None = None,
                 attack_rng: np.random.Generator | None = None) -> EvalReport:
        """Full-split PMD report; attacks target the model under evaluation."""
        rows = []
        if attack_rng is None:
            attack_rng = np.random.default_rng(0)
        for unseen, split in ((False, "seen"), (True, "unseen")):
            for i, p in self.dataset.test_pairs(unseen):
                pose_m, id_m, gt_m = self.dataset.test_triple(i, p, unseen)
                val = self._eval_pair_pmd(pose_m.vertices, id_m, gt_m)
                adv_val = None
                if attack_cfg is not None and not unseen:
                    adv = generate_adversarial(self.params, pose_m.vertices, id_m,
                                               gt_m.vertices, attack_cfg, attack_rng)
                    adv_val = self._eval_pair_pmd(adv.points, id_m, gt_m)
                rows.append(EvalRow(split, i, p, val, adv_val))
        return EvalReport(rows)

    # -- checkpointing -------------------------------------------------------
    def _ckpt_paths(self, epoch: int):
        base = self.out_dir / f"checkpoint_ep{epoch:04d}"
        return base.with_suffix(".model"), base.with_suffix(".opt"), base.with_suffix(".state.json")

    def save_checkpoint(self, epoch: int):
        model_p, opt_p, state_p = self._ckpt_paths(epoch)
        self.params.save(model_p)
        from .archive import write_archive
        write_archive(opt_p, self.opt.state_arrays())
        state = {
            "epoch": epoch,
            "opt_step_count": self.opt.step_count,
            "streams": {n: self.streams[n].bit_generator.state for n in STREAM_NAMES},
        }
        state_p.write_text(json.dumps(state, sort_keys=True))

    def load_checkpoint(self, base: str | Path):
        from .archive import read_archive
        base = Path(base)
        loaded = ModelParams.load(base.with_suffix(".model"))
        if loaded.cfg != self.cfg.model:
            raise ShapeError(f"checkpoint model config {loaded.cfg} != {self.cfg.model}")
        for name, p in self.params.named().items():
            p.values[...] = loaded[name].values
        arrays, _ = read_archive(base.with_suffix(".opt"))
        state = json.loads(base.with_suffix(".state.json").read_text())
        self.opt.load_state_arrays(arrays, state["opt_step_count"])
        for n in STREAM_NAMES:
            self.streams[n].bit_generator.state = state["streams"][n]
        self.epochs_done = int(state["epoch"])

    # -- full runs -----------------------------------------------------------
    def fit(self, resume_from: str | Path | None = None, log=None) -> list[str]:
        """Train clean epochs, then adversarial epochs; write metrics CSV."""
        cfg = self.cfg
        if resume_from is not None:
            self.load_checkpoint(resume_from)
        self.metrics_rows = []
        for epoch in range(self.epochs_done + 1, cfg.epochs + 1):
            adversarial = epoch > cfg.adv_start
            stats = (self.train_epoch_adversarial() if adversarial
                     else self.train_epoch_clean())
            pmd_seen, pmd_unseen, pmd_adv = self._epoch_metrics(epoch)
            row = (f"{epoch},{stats.loss_rec!r},{stats.loss_edge!r},"
                   f"{pmd_seen!r},{pmd_unseen!r},{pmd_adv!r}")
            self.metrics_rows.append(row)
            self.epochs_done = epoch
            if log is not None:
                log(f"epoch {epoch}/{cfg.epochs} "
                    f"{'adv' if adversarial else 'clean'} "
                    f"loss_rec={stats.loss_rec:.6f} pmd_seen={pmd_seen:.3f}")
            if self.out_dir is not None:
                self._write_metrics()
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    self.save_checkpoint(epoch)
        if self.out_dir is not None:
            self._write_metrics()
            self.params.save(self.out_dir / "model.ckpt")
        return self.metrics_rows

    def _write_metrics(self):
        path = self.out_dir / "metrics.csv"
        path.write_text(METRICS_HEADER + "\n" + "".join(r + "\n" for r in self.metrics_rows))
