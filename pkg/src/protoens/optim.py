"""SGD with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError, ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    weight_decay: float = 1e-5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")


def sgd_step(params: list[Tensor], cfg: SgdConfig) -> None:
    """Apply p <- p - lr * (grad + wd * p) to every parameter, then clear grads."""
    for p in params:
        if p.grad is None:
            raise ContractError("sgd_step on a parameter with no gradient")
        if p.grad.shape != p.data.shape:
            raise ContractError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")
    for p in params:
        p.data -= cfg.learning_rate * (p.grad + cfg.weight_decay * p.data)
        p.grad = None
