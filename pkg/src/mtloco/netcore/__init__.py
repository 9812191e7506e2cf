"""Minimal float64 differentiable core: tensors, layers, Adam, gradient checks."""
from . import tensor
from .gradcheck import finite_diff_check
from .layers import LSTM, MLP, Dense, LayerSpec, Sequential
from .optim import Adam, clip_by_global_norm, optimizer_step
from .params import GradSet, ParamStore, load_store, save_store
from .tensor import Tensor, backward, no_grad, softmax

__all__ = [
    "Adam", "Dense", "GradSet", "LSTM", "LayerSpec", "MLP", "ParamStore", "Sequential",
    "Tensor", "backward", "clip_by_global_norm", "finite_diff_check", "load_store",
    "no_grad", "optimizer_step", "save_store", "softmax", "tensor",
]
