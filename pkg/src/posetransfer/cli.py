"""Command-line interface for the pose-transfer pipeline.

Subcommands: gen-data, train, transfer, attack, eval, sor. Exit codes:
0 success, 1 usage error, 2 data error. All randomness derives from --seed.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, generate_adversarial
from .config import load_run_config
from .errors import ConfigError
from .geometry import canonicalize, sor
from .losses import pmd
from .meshio import Mesh, load_mesh, save_mesh
from .model import ModelParams, forward
from .synthdata import DatasetSplit, generate_figure, make_dataset
from .training import PMD_SCALE, Trainer


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1, not 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    p = _Parser(prog="posetransfer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", type=Path, default=None)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    sp.add_argument("--out", type=Path, required=True)
    common(sp)

    sp = sub.add_parser("train", help="train a model on a dataset directory")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--resume", type=Path, default=None,
                    help="checkpoint base path (without extension)")
    common(sp)

    sp = sub.add_parser("transfer", help="transfer a pose onto an identity mesh")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--pose", type=Path, required=True)
    sp.add_argument("--identity", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--format", choices=("obj", "ply"), default=None)
    common(sp)

    sp = sub.add_parser("attack", help="generate an adversarial pose cloud")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--pose", type=Path, required=True)
    sp.add_argument("--identity", type=Path, required=True)
    sp.add_argument("--gt", type=Path, required=True)
    sp.add_argument("--method", choices=("fgm", "ifgm", "mifgm", "pgd"), default=None)
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--report", type=Path, default=None,
                    help="report CSV path (default: <out>.csv)")
    common(sp)

    sp = sub.add_parser("eval", help="PMD report for a model on a dataset")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--attack", action="store_true",
                    help="also evaluate under the configured attack")
    sp.add_argument("--method", choices=("fgm", "ifgm", "mifgm", "pgd"), default=None)
    sp.add_argument("--eps", type=float, default=None)
    common(sp)

    sp = sub.add_parser("sor", help="statistical outlier removal on a point cloud")
    sp.add_argument("--in", dest="infile", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--alpha", type=float, default=1.1)
    sp.add_argument("--format", choices=("obj", "ply"), default=None)
    common(sp)
    return p


def _require(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _canonical(mesh: Mesh):
    mesh_c, t = canonicalize(mesh)
    return mesh_c, t


def _attack_cfg(base: AttackConfig, method, eps) -> AttackConfig:
    from dataclasses import replace
    kwargs = {}
    if method is not None:
        kwargs["method"] = method
    if eps is not None:
        kwargs["eps"] = eps
    return replace(base, **kwargs) if kwargs else base


# -- subcommand bodies ---------------------------------------------------

def _cmd_gen_data(args) -> int:
    _, ds_cfg = load_run_config(args.config and _require(args.config))
    rng = np.random.default_rng(args.seed)
    split = make_dataset(ds_cfg, rng)
    out: Path = args.out
    (out / "identities").mkdir(parents=True, exist_ok=True)
    (out / "poses").mkdir(exist_ok=True)
    (out / "dataset.json").write_text(split.to_json())
    manifest = []
    for group, shapes in (("train", split.train_shapes), ("test", split.test_shapes)):
        for i, shape in enumerate(shapes):
            rel = f"identities/{group}_{i:03d}.obj"
            save_mesh(out / rel, split.identity_mesh(shape))
            manifest.append(f"identity {group} {i} {rel}")
    for group, poses in (("train", split.train_poses), ("unseen", split.unseen_poses)):
        for p, pose in enumerate(poses):
            carrier = p % len(split.train_shapes)
            rel = f"poses/{group}_{p:03d}.obj"
            save_mesh(out / rel, generate_figure(split.train_shapes[carrier], pose,
                                                 ds_cfg.figure_spec))
            manifest.append(f"pose {group} {p} carrier={carrier} {rel}")
    for unseen, name in ((False, "seen"), (True, "unseen")):
        group = "unseen" if unseen else "train"
        for i, p in split.test_pairs(unseen):
            manifest.append(
                f"triple {name} pose=poses/{group}_{p:03d}.obj "
                f"identity=identities/test_{i:03d}.obj")
    manifest.append("groundtruth regenerate-from dataset.json")
    (out / "manifest.txt").write_text("".join(line + "\n" for line in manifest))
    print(f"wrote dataset ({split.cfg.train_identities} train identities, "
          f"{split.cfg.train_poses} train poses) to {out}")
    return 0


def _load_split(data_dir: Path) -> DatasetSplit:
    return DatasetSplit.from_json(_require(data_dir / "dataset.json").read_text())


def _cmd_train(args) -> int:
    train_cfg, _ = load_run_config(args.config and _require(args.config),
                                   overrides={"seed": str(args.seed)})
    split = _load_split(args.data)
    trainer = Trainer(split, train_cfg, out_dir=args.out)
    trainer.fit(resume_from=args.resume,
                log=lambda msg: print(msg, file=sys.stderr))
    print(f"wrote {args.out / 'metrics.csv'} and {args.out / 'model.ckpt'}")
    return 0


def _cmd_transfer(args) -> int:
    params = ModelParams.load(_require(args.model))
    pose_mesh = load_mesh(_require(args.pose))
    id_mesh = load_mesh(_require(args.identity))
    pose_c, _ = _canonical(pose_mesh)
    id_c, id_t = _canonical(id_mesh)
    result, _ = forward(pose_c.vertices, id_c, params, phi=0.0, training=False,
                        rng_down=np.random.default_rng(args.seed))
    result = result.with_vertices(id_t.invert(result.vertices))
    save_mesh(args.out, result, fmt=args.format)
    print(f"wrote {args.out} ({len(result.vertices)} vertices)")
    return 0


def _cmd_attack(args) -> int:
    train_cfg, _ = load_run_config(args.config and _require(args.config))
    cfg = _attack_cfg(train_cfg.attack, args.method, args.eps)
    params = ModelParams.load(_require(args.model))
    pose_c, _ = _canonical(load_mesh(_require(args.pose)))
    id_c, _ = _canonical(load_mesh(_require(args.identity)))
    gt_c, _ = _canonical(load_mesh(_require(args.gt)))
    rng = np.random.default_rng(args.seed)
    result = generate_adversarial(params, pose_c.vertices, id_c, gt_c.vertices,
                                  cfg, rng)
    save_mesh(args.out, Mesh(result.points, None), fmt="ply")

    def transfer_pmd(points):
        mesh, _ = forward(points, id_c, params, phi=0.0, training=False,
                          rng_down=np.random.default_rng(args.seed))
        return pmd(mesh.vertices, gt_c.vertices) * PMD_SCALE

    report = args.report or args.out.with_suffix(args.out.suffix + ".csv")
    report.write_text(
        "clean_pmd_x1e4,adv_pmd_x1e4,perturbation_norm,sor_removed\n"
        f"{transfer_pmd(pose_c.vertices)!r},{transfer_pmd(result.points)!r},"
        f"{result.perturbation_norm!r},{len(result.removed_indices)}\n")
    print(f"wrote {args.out} and {report}")
    return 0


def _cmd_eval(args) -> int:
    train_cfg, _ = load_run_config(args.config and _require(args.config))
    params = ModelParams.load(_require(args.model))
    split = _load_split(args.data)
    from dataclasses import replace
    cfg = replace(train_cfg, model=params.cfg)
    trainer = Trainer(split, cfg)
    for name, p in trainer.params.named().items():
        p.values[...] = params[name].values
    attack_cfg = None
    if args.attack or args.method is not None or args.eps is not None:
        attack_cfg = _attack_cfg(train_cfg.attack, args.method, args.eps)
    report = trainer.evaluate(attack_cfg,
                              attack_rng=np.random.default_rng(args.seed))
    sys.stdout.write(report.to_csv())
    return 0


def _cmd_sor(args) -> int:
    mesh = load_mesh(_require(args.infile))
    kept, removed = sor(mesh.vertices, args.k, args.alpha)
    save_mesh(args.out, Mesh(kept, None), fmt=args.format)
    print(f"kept {len(kept)} points, removed {len(removed)}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "transfer": _cmd_transfer,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "sor": _cmd_sor,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
