"""Overcomplete ICA and causal discovery by kernel moment matching."""

from .diffcore import Adam, AdamState, DivergenceError, Param, ProxConfig, Tensor, backward, grad_check, prox_l1
from .mmd import KernelSpec, gaussian_kernel, joint_mmd2, kernel_from_median, median_bandwidth, mmd2
from .oica import OicaModel, TrainConfig, TrainingDivergedError, mix, train
from .sources import MlpSourceGen, MogSourceGen, gumbel_softmax, make_source_gen, sample_gumbel

__all__ = [
    "Adam", "AdamState", "DivergenceError", "Param", "ProxConfig", "Tensor",
    "backward", "grad_check", "prox_l1",
    "KernelSpec", "gaussian_kernel", "joint_mmd2", "kernel_from_median",
    "median_bandwidth", "mmd2",
    "OicaModel", "TrainConfig", "TrainingDivergedError", "mix", "train",
    "MlpSourceGen", "MogSourceGen", "gumbel_softmax", "make_source_gen", "sample_gumbel",
]
