"""Consistency-regularized unpaired image-to-image translation framework.

Trains dual generator/discriminator pairs with a cycle-consistency
constraint and consistency regularization of the discriminators on real,
translated, and reconstructed samples, plus the evaluation protocol
(classifier accuracy on translations, paired MSE, feature distance,
paired t-tests, and update-speed benchmarks) and an experiment runner.
"""

from .augment import TransformDraw, TransformSpec, apply, draw, standard_menu
from .data import Dataset, DomainPair, batcher, load_mnist_like, make_paired_surrogate
from .losses import LossReport, LossWeights
from .models import DigitClassifier, Generator, ModelBundle, PatchDiscriminator, init_weights
from .training import TrainConfig, TrainState, train, train_classifier, train_step

__version__ = "0.1.0"

__all__ = [
    "TransformDraw",
    "TransformSpec",
    "apply",
    "draw",
    "standard_menu",
    "Dataset",
    "DomainPair",
    "batcher",
    "load_mnist_like",
    "make_paired_surrogate",
    "LossReport",
    "LossWeights",
    "DigitClassifier",
    "Generator",
    "ModelBundle",
    "PatchDiscriminator",
    "init_weights",
    "TrainConfig",
    "TrainState",
    "train",
    "train_classifier",
    "train_step",
    "__version__",
]
