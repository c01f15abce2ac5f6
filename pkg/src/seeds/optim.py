"""Adam optimizer with bias correction and decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .nn import Param


class Adam:
    """Per-parameter moment buffers keyed by name; updates happen in place.

    Weight decay is decoupled (applied directly to the parameter, not mixed
    into the gradient), so zero-gradient steps with zero decay are no-ops.
    """

    def __init__(self, params: list[Param], lr: float = 1e-4, weight_decay: float = 1e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0.0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        b1, b2 = betas
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ValueError(f"moment coefficients must lie in (0, 1), got {betas}")
        if eps <= 0.0:
            raise ValueError(f"numeric floor must be positive, got {eps}")
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(b1)
        self.beta2 = float(b2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        """Apply one update from the gradients currently accumulated on the params."""
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"NaN/Inf gradient for parameter {p.name}; update rejected")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            if m.shape != p.value.shape:
                raise ValueError(f"moment buffer for {p.name} has shape {m.shape}, "
                                 f"parameter has {p.value.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.value -= self.lr * update
            if self.weight_decay > 0.0:
                p.value -= self.lr * self.weight_decay * p.value

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        """Named buffers for checkpointing (moments plus step count)."""
        out = {f"{prefix}.step": np.array([float(self.step_count)])}
        for p in self.params:
            out[f"{prefix}.m.{p.name}"] = self.m[p.name]
            out[f"{prefix}.v.{p.name}"] = self.v[p.name]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays[f"{prefix}.step"][0])
        for p in self.params:
            self.m[p.name][...] = arrays[f"{prefix}.m.{p.name}"]
            self.v[p.name][...] = arrays[f"{prefix}.v.{p.name}"]
