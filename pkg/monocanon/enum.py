"""Enums"""

from enum import Enum


class LayerKind(Enum):
    """Layer kinds of the differentiable kernel."""
    CONV = "conv"
    RELU = "relu"
    ADAPTIVE_AVG_POOL = "adaptive_avg_pool"
    DENSE = "dense"
    FLATTEN = "flatten"

    def __str__(self) -> str:
        return self.value


class OptimizerKind(Enum):
    """Parameter update rules."""
    SGD = "sgd"
    ADAM = "adam"

    def __str__(self) -> str:
        return self.value


class CanonicalizerKind(Enum):
    """Canonicalizers an adapted layer can use."""
    DEC = "dec"
    VANILLA = "vanilla"
    ORACLE = "oracle"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


class AdapterMode(Enum):
    """How an adapted layer treats its output."""
    EQUIVARIANT = "equivariant"
    INVARIANT = "invariant"

    def __str__(self) -> str:
        return self.value


class BackwardMode(Enum):
    """Gradient approximations through the fixed point."""
    PHANTOM = "phantom"
    UNROLL = "unroll"

    def __str__(self) -> str:
        return self.value


class BaselineKind(Enum):
    """Comparison methods sharing the toy base model."""
    AUGMENTED = "augmented"
    VANILLA_CANON = "vanilla_canon"
    EQU_LOSS = "equ_loss"
    INV_LOSS = "inv_loss"
    DEC = "dec"

    def __str__(self) -> str:
        return self.value
