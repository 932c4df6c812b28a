"""3D pose transfer with masked multi-scale encoding, channel-wise attention
decoding, and on-the-fly adversarial training — on a from-scratch autodiff
engine, verified at desk scale on a procedural articulated-mesh dataset."""

from .attacks import AdversarialResult, AttackConfig, generate_adversarial
from .autodiff import Tensor, no_grad
from .geometry import CanonicalTransform, canonicalize, sor
from .losses import LossWeights, f_adv, l_edge, l_full, l_rec, pmd
from .meshio import Mesh, load_mesh, save_mesh
from .model import ModelConfig, ModelParams, forward, init_params
from .optim import Adam
from .synthdata import DatasetConfig, DatasetSplit, generate_figure, make_dataset
from .training import EvalReport, TrainConfig, Trainer

__all__ = [
    "AdversarialResult", "AttackConfig", "generate_adversarial",
    "Tensor", "no_grad",
    "CanonicalTransform", "canonicalize", "sor",
    "LossWeights", "f_adv", "l_edge", "l_full", "l_rec", "pmd",
    "Mesh", "load_mesh", "save_mesh",
    "ModelConfig", "ModelParams", "forward", "init_params",
    "Adam",
    "DatasetConfig", "DatasetSplit", "generate_figure", "make_dataset",
    "EvalReport", "TrainConfig", "Trainer",
]

__version__ = "0.1.0"
