"""Minimal dense neural-network kernel: linear layers, explicit backprop, gradient checks.

Everything is float64 and batch-first: activations are (n, width) arrays.
Backward passes are written per block (no general tape); each layer caches
its forward inputs explicitly and refuses to run backward without them.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("identity", "leaky_relu", "sigmoid")


class Param:
    """A named trainable array with an accumulated gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name!r}, shape={self.value.shape})"


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply_activation(a: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "identity":
        return a
    if kind == "leaky_relu":
        return np.where(a >= 0.0, a, slope * a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _activation_grad(a: np.ndarray, out: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "identity":
        return np.ones_like(a)
    if kind == "leaky_relu":
        return np.where(a >= 0.0, 1.0, slope)
    if kind == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {kind!r}")


class LinearLayer:
    """Dense layer y = act(x @ W.T + b) with weights (out, in) and bias (out,).

    Args:
        in_dim / out_dim: widths.
        activation: one of "identity", "leaky_relu", "sigmoid".
        slope: leaky-relu negative slope, required in (0, 1).
        rng: seeded stream used for weight init (He-style scale).
        name: prefix for parameter names (must be unique per model).
    """

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 slope: float = 0.2, rng=None, name: str = "linear"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        if not (0.0 < slope < 1.0):
            raise ValueError(f"leaky-relu slope must be in (0, 1), got {slope}")
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"layer dims must be positive, got ({in_dim}, {out_dim})")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.activation = activation
        self.slope = float(slope)
        if rng is None:
            w = np.zeros((out_dim, in_dim))
        else:
            w = rng.normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.zeros(out_dim))
        self._cache = None

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"{self.w.name}: expected (batch, {self.in_dim}) input, got shape {x.shape}")
        if x.shape[1] != self.in_dim:
            raise ValueError(
                f"{self.w.name}: input width {x.shape[1]} does not match weights "
                f"({self.out_dim}, {self.in_dim})")
        pre = x @ self.w.value.T + self.b.value
        out = _apply_activation(pre, self.activation, self.slope)
        self._cache = (x, pre, out)
        return out

    def backward(self, dout: np.ndarray, accumulate: bool = True) -> np.ndarray:
        """Return the input gradient; accumulate parameter gradients unless told not to."""
        if self._cache is None:
            raise RuntimeError(f"{self.w.name}: backward called without a preceding forward")
        x, pre, out = self._cache
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != out.shape:
            raise ValueError(f"{self.w.name}: upstream gradient shape {dout.shape} != output {out.shape}")
        dpre = dout * _activation_grad(pre, out, self.activation, self.slope)
        if accumulate:
            self.w.grad += dpre.T @ x
            self.b.grad += dpre.sum(axis=0)
        return dpre @ self.w.value

    def clear_cache(self) -> None:
        self._cache = None


class MLP:
    """A stack of LinearLayers with shared forward/backward plumbing."""

    def __init__(self, widths: list[int], activations: list[str], slope: float = 0.2,
                 rng=None, name: str = "mlp"):
        if len(widths) < 2:
            raise ValueError("MLP needs at least an input and an output width")
        if len(activations) != len(widths) - 1:
            raise ValueError(f"{len(widths) - 1} layers need {len(widths) - 1} activations, "
                             f"got {len(activations)}")
        self.layers = [
            LinearLayer(widths[i], widths[i + 1], activations[i], slope, rng, f"{name}.l{i}")
            for i in range(len(widths) - 1)
        ]
        self.in_dim = widths[0]
        self.out_dim = widths[-1]

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray, accumulate: bool = True) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout, accumulate=accumulate)
        return dout

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer.clear_cache()


def zero_grads(params: list[Param]) -> None:
    for p in params:
        p.zero_grad()


def check_unique_names(params: list[Param]) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dupes}")


def numeric_gradient(loss_fn, param: Param, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss with respect to one parameter."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = loss_fn()
        flat[i] = orig - h
        lo = loss_fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative disagreement between two gradient arrays."""
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    if den < 1e-12:
        return 0.0
    return num / den


def check_gradients(loss_and_backward, params: list[Param], h: float = 1e-5,
                    tol: float = 1e-4) -> dict[str, float]:
    """Compare analytic gradients against central differences for every parameter.

    `loss_and_backward()` must zero grads, run forward+backward, and return the loss.
    Returns the per-parameter relative errors; raises AssertionError past `tol`.
    """
    loss_and_backward()
    analytic = {p.name: p.grad.copy() for p in params}

    def loss_only():
        return loss_and_backward()

    errors = {}
    for p in params:
        numeric = numeric_gradient(loss_only, p, h)
        err = relative_error(analytic[p.name], numeric)
        errors[p.name] = err
        if err >= tol:
            raise AssertionError(f"gradient check failed for {p.name}: relative error {err:.3e} >= {tol}")
    return errors


def assert_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name}")
