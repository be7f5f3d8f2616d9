"""Conditional motion GAN for skeletal animation.

Submodules:

* :mod:`animgan.skeleton`, :mod:`animgan.bvh` -- rigs, motions, BVH IO, forward kinematics
* :mod:`animgan.codec` -- sparse pose autoencoder (84 -> 20)
* :mod:`animgan.ndl` -- tape-based autodiff, layers, optimizers, gradient checks
* :mod:`animgan.stnbnn` -- main-joint selection
* :mod:`animgan.losses` -- adversarial and spatiotemporal conditioning losses
* :mod:`animgan.generator`, :mod:`animgan.discriminator` -- the two networks
* :mod:`animgan.augment` -- cluster-balanced augmentation and hard negatives
* :mod:`animgan.train` -- training loop, checkpoints, metrics, evaluation
* :mod:`animgan.cli` -- command-line front end
"""

from .kernels import BACKEND
from .skeleton import CANONICAL_JOINTS, MotionSequence, Skeleton, canonical_skeleton, forward_kinematics
from .bvh import parse_bvh, read_bvh_file, write_bvh, write_bvh_file
from .codec import CodecConfig, PoseCodec, train_autoencoder
from .generator import GeneratorNet, generate
from .discriminator import DiscriminatorNet, build_st_graph
from .train import TrainConfig, evaluate, train_gan
from .toy import make_toy_corpus

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CANONICAL_JOINTS",
    "MotionSequence",
    "Skeleton",
    "canonical_skeleton",
    "forward_kinematics",
    "parse_bvh",
    "read_bvh_file",
    "write_bvh",
    "write_bvh_file",
    "CodecConfig",
    "PoseCodec",
    "train_autoencoder",
    "GeneratorNet",
    "generate",
    "DiscriminatorNet",
    "build_st_graph",
    "TrainConfig",
    "evaluate",
    "train_gan",
    "make_toy_corpus",
    "__version__",
]
