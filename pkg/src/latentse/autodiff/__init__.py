"""Minimal reverse-mode autodiff engine: tensors, layers, Adam, and
finite-difference gradient verification."""

from . import engine
from .engine import Tensor, concat, exp, frozen, log, matmul, relu, sigmoid, square, tanh
from .gradcheck import GradCheckReport, gradient_check
from .kernels import BACKEND_NAME, COMPILED
from .layers import DenseLayer, GruLayer, gru_sequence
from .optim import Adam

__all__ = [
    "Adam",
    "BACKEND_NAME",
    "COMPILED",
    "DenseLayer",
    "GradCheckReport",
    "GruLayer",
    "Tensor",
    "concat",
    "engine",
    "exp",
    "frozen",
    "gradient_check",
    "gru_sequence",
    "log",
    "matmul",
    "relu",
    "sigmoid",
    "square",
    "tanh",
]
