from .blstm import BLSTM, StateReduce, blstm_backward, blstm_forward
from .gradcheck import grad_check
from .layers import (Activation, BatchNorm, Dense, Dropout, Flatten, Layer, Reshape, Sequential,
                     ShapeError, activate, sigmoid, softmax)
from .losses import cross_entropy_from_logits, cross_entropy_loss, masked_mse, mse_loss
from .optim import Adam, AdamState, adam_step
from .parallel import get_threads, set_threads

__all__ = [
    "Activation", "Adam", "AdamState", "BLSTM", "BatchNorm", "Dense", "Dropout", "Flatten", "Layer",
    "Reshape", "Sequential", "ShapeError", "StateReduce", "activate", "adam_step", "blstm_backward",
    "blstm_forward", "cross_entropy_from_logits", "cross_entropy_loss", "get_threads", "grad_check",
    "masked_mse", "mse_loss", "set_threads", "sigmoid", "softmax",
]
