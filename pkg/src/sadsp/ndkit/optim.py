"""Adam with decoupled weight decay.

One optimizer instance owns one parameter group; the trainer holds several
with different learning rates and steps each only in its phase. step() uses
the shared step counter for bias correction, so a group that sits out a
phase simply keeps its counter still (no stale-momentum drift).
"""

from __future__ import annotations

from array import array
from typing import Iterable

from ..errors import ContractError
from .backend import K
from .tensor import Tensor, _zeros_buf


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        if not self.params:
            raise ContractError("Adam needs at least one parameter")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError(f"betas must lie in [0,1), got {beta1}, {beta2}")
        if lr < 0.0 or eps <= 0.0:
            raise ContractError(f"bad lr={lr} or eps={eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: list[array] = [_zeros_buf(p.size) for p in self.params]
        self.v: list[array] = [_zeros_buf(p.size) for p in self.params]

    def step(self) -> None:
        """Apply one update from the gradients currently held by the params."""
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise ContractError("step() before backward(): a parameter has no gradient")
            K.adam_step(p.values, p.grad, m, v, self.t,
                        self.lr, self.beta1, self.beta2, self.eps,
                        self.weight_decay, p.size)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
