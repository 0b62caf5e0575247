"""Minimal dense numerical core: tape autodiff, layers, optimizers, checks."""

from .tape import (
    Node, Tape, add, add_n, clear_grads, clip, concat, constant, dropout,
    elemwise_max, linear, log, matvec, mul, pick, relu, reshape, scale,
    sigmoid, softmax, square, sub, tanh, zeros,
)
from .layers import DenseParams, LstmParams, dense_forward, lstm_step
from .optim import AdamOptimizer, sgd_step
from .gradcheck import finite_diff_check
from .checkpoint import config_fingerprint, load_checkpoint, save_checkpoint

__all__ = [
    "Node", "Tape", "add", "add_n", "clear_grads", "clip", "concat", "constant",
    "dropout", "elemwise_max", "linear", "log", "matvec", "mul", "pick", "relu",
    "reshape", "scale", "sigmoid", "softmax", "square", "sub", "tanh", "zeros",
    "DenseParams", "LstmParams", "dense_forward", "lstm_step",
    "AdamOptimizer", "sgd_step", "finite_diff_check",
    "config_fingerprint", "load_checkpoint", "save_checkpoint",
]
