"""Conditioned 1D denoising diffusion over region features.

Forward process: x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) z_t, with the usual
closed form x_t = sqrt(abar_t) x_0 + sqrt(1-abar_t) z. The noise predictor is a
fusion network conditioned on (visual content X, per-branch semantics V_I, V_C);
x_t rides in the noise slot of the content encoders. Reverse steps use the fixed
variance sigma_t^2 = beta_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Param
from .rng import RngStream
from .synth import (
    ContentEncoder, FusionDecoder, content_encode, content_encode_backward, fuse,
)

TIMESTEP_EMBED_DIM = 32
DENOISER_MODES = ("per-timestep", "shared")


@dataclass
class NoiseSchedule:
    """Linear beta schedule with precomputed alpha and cumulative-alpha tables."""

    T: int
    betas: np.ndarray  # betas[t-1] is beta_t for t in 1..T

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.shape != (self.T,):
            raise ValueError(f"{self.T}-step schedule needs {self.T} betas, got {self.betas.shape}")
        if np.any(self.betas <= 0.0) or np.any(self.betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(self.alphas)])  # index by t directly
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValueError("cumulative alphas must be strictly decreasing")

    def _check_t(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if not (lo <= t <= self.T):
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check_t(t, lo=0)])


def build_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Betas linearly interpolated, inclusive at both ends."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if T == 1:
        if beta_start != beta_end:
            raise ValueError("a single-step schedule requires beta_start == beta_end")
        betas = np.array([beta_start])
    else:
        betas = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule(T, betas)


def diffuse_step(x_prev: np.ndarray, t: int, z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """One forward noising step."""
    beta = sched.beta(t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_prev.shape != z.shape:
        raise ValueError(f"state/noise shapes differ: {x_prev.shape} vs {z.shape}")
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * z


def diffuse_closed(x0: np.ndarray, t: int, z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Single-shot marginal sample at timestep t; t=0 returns x0 unchanged."""
    ab = sched.alpha_bar(t)
    x0 = np.asarray(x0, dtype=np.float64)
    if t == 0:
        return x0.copy()
    z = np.asarray(z, dtype=np.float64)
    if x0.shape != z.shape:
        raise ValueError(f"state/noise shapes differ: {x0.shape} vs {z.shape}")
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * z


def predict_mu(x_t: np.ndarray, t: int, z_hat: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Posterior mean: (x_t - (1-alpha_t)/sqrt(1-abar_t) * z_hat) / sqrt(alpha_t)."""
    alpha = sched.alpha(t)
    ab = sched.alpha_bar(t)
    if ab >= 1.0:
        raise ValueError(f"alpha_bar({t}) = 1; posterior mean undefined")
    x_t = np.asarray(x_t, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    return (x_t - (1.0 - alpha) / math.sqrt(1.0 - ab) * z_hat) / math.sqrt(alpha)


def timestep_embedding(t: int, dim: int = TIMESTEP_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of an integer timestep."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb


class DenoiserSet:
    """One noise-predictor parameter set: two content encoders plus a fusion decoder."""

    def __init__(self, feature_dim: int, semantic_dim: int, content_dim: int,
                 extra: int = 0, rng: RngStream | None = None, name: str = "set"):
        self.d = feature_dim
        self.s = semantic_dim
        self.e = content_dim
        self.extra = extra
        self.enc_ingredient = ContentEncoder(feature_dim, feature_dim + extra, semantic_dim,
                                             content_dim, rng=rng, name=f"{name}.ing")
        self.enc_cuisine = ContentEncoder(feature_dim, feature_dim + extra, semantic_dim,
                                          content_dim, rng=rng, name=f"{name}.cui")
        self.fusion = FusionDecoder(content_dim, feature_dim, rng=rng, name=f"{name}.fuse")

    def params(self) -> list[Param]:
        return self.enc_ingredient.params() + self.enc_cuisine.params() + self.fusion.params()

    def forward(self, x_t: np.ndarray, content: np.ndarray, v_i: np.ndarray,
                v_c: np.ndarray) -> np.ndarray:
        n_i = content_encode(self.enc_ingredient, x_t, content, v_i)
        n_c = content_encode(self.enc_cuisine, x_t, content, v_c)
        return fuse(self.fusion, n_i, n_c)

    def backward(self, d_out: np.ndarray, accumulate: bool = True):
        d_ni, d_nc = self.fusion.backward(d_out, accumulate=accumulate)
        d_xt_i, d_content_i, d_vi = content_encode_backward(self.enc_ingredient, d_ni, accumulate)
        d_xt_c, d_content_c, d_vc = content_encode_backward(self.enc_cuisine, d_nc, accumulate)
        return d_xt_i + d_xt_c, d_content_i + d_content_c, d_vi, d_vc


class DenoiserBank:
    """Noise predictors for every timestep.

    "per-timestep" keeps T independent parameter sets; "shared" keeps a single
    set and appends a sinusoidal timestep embedding to the content condition.
    """

    def __init__(self, T: int, feature_dim: int, semantic_dim: int, content_dim: int,
                 mode: str = "per-timestep", rng: RngStream | None = None,
                 temb_dim: int = TIMESTEP_EMBED_DIM, name: str = "denoiser"):
        if mode not in DENOISER_MODES:
            raise ValueError(f"unknown denoiser mode {mode!r}, expected one of {DENOISER_MODES}")
        self.T = int(T)
        self.d = feature_dim
        self.s = semantic_dim
        self.e = content_dim
        self.mode = mode
        self.temb_dim = temb_dim if mode == "shared" else 0
        if mode == "per-timestep":
            self.sets = [DenoiserSet(feature_dim, semantic_dim, content_dim, 0, rng,
                                     f"{name}.t{t:03d}") for t in range(1, self.T + 1)]
        else:
            self.sets = [DenoiserSet(feature_dim, semantic_dim, content_dim, self.temb_dim,
                                     rng, f"{name}.shared")]

    def params(self) -> list[Param]:
        return [p for s in self.sets for p in s.params()]

    def set_for(self, t: int) -> DenoiserSet:
        t = int(t)
        if not (1 <= t <= self.T):
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return self.sets[t - 1] if self.mode == "per-timestep" else self.sets[0]

    def _content(self, x_content: np.ndarray, t: int, n: int) -> np.ndarray:
        if self.mode == "shared":
            emb = np.tile(timestep_embedding(t, self.temb_dim), (n, 1))
            return np.concatenate([x_content, emb], axis=1)
        return x_content

    def predict(self, x_t: np.ndarray, t: int, cond) -> np.ndarray:
        """Predicted noise for a batch that shares one timestep."""
        x_content, v_i, v_c = _check_condition(cond, x_t.shape[0], self.d, self.s)
        ds = self.set_for(t)
        return ds.forward(np.asarray(x_t, dtype=np.float64),
                          self._content(x_content, t, x_t.shape[0]), v_i, v_c)

    def predict_backward(self, t: int, d_out: np.ndarray, accumulate: bool = True):
        """Backprop through the most recent predict() at this timestep."""
        d_xt, d_content, d_vi, d_vc = self.set_for(t).backward(d_out, accumulate)
        if self.temb_dim:
            d_content = d_content[:, :self.d]
        return d_xt, d_content, d_vi, d_vc


def _check_condition(cond, n: int, d: int, s: int):
    x_content, v_i, v_c = cond
    out = []
    for name, arr, width in (("content X", x_content, d),
                             ("ingredient semantics", v_i, s),
                             ("cuisine semantics", v_c, s)):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = np.tile(arr, (n, 1))
        if arr.shape != (n, width):
            raise ValueError(f"condition {name} must be ({n}, {width}), got {arr.shape}")
        out.append(arr)
    return tuple(out)


def predict_noise(bank: DenoiserBank, x_t: np.ndarray, t: int, cond) -> np.ndarray:
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    return bank.predict(x_t, t, cond)


def reverse_step(x_t: np.ndarray, t: int, cond, bank: DenoiserBank, sched: NoiseSchedule,
                 rng: RngStream) -> np.ndarray:
    """One denoising step: mu + sigma_t * zeta, with zeta = 0 at the final step."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    z_hat = bank.predict(x_t, t, cond)
    mu = predict_mu(x_t, t, z_hat, sched)
    if t == 1:
        return mu
    return mu + math.sqrt(sched.beta(t)) * rng.normal(mu.shape)


def sample(bank: DenoiserBank, cond, sched: NoiseSchedule, rng: RngStream,
           count: int) -> np.ndarray:
    """Run the full reverse chain from x_T ~ N(0, I); returns (count, d) features."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    x = rng.normal((count, bank.d))
    for t in range(sched.T, 0, -1):
        x = reverse_step(x, t, cond, bank, sched, rng)
    return x


def invert_closed(x_t: np.ndarray, t: int, z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Recover x0 from x_t given the exact noise: inverse of diffuse_closed."""
    ab = sched.alpha_bar(t)
    return (np.asarray(x_t) - math.sqrt(1.0 - ab) * np.asarray(z)) / math.sqrt(ab)


def _draw_training_noise(n: int, d: int, T: int, rng: RngStream, ts, zs):
    if ts is None:
        ts = rng.integers(1, T + 1, (n,))
    ts = np.asarray(ts, dtype=np.intp)
    if zs is None:
        zs = rng.normal((n, d))
    zs = np.asarray(zs, dtype=np.float64)
    if ts.shape != (n,) or zs.shape != (n, d):
        raise ValueError(f"need {n} timesteps and ({n}, {d}) noises, got {ts.shape} and {zs.shape}")
    return ts, zs


def rfddm_loss(clean: np.ndarray, cond, bank, sched: NoiseSchedule, rng: RngStream,
               ts=None, zs=None) -> float:
    """Denoising MSE: mean over the batch of |z - z_hat(x_t, t, cond)|^2.

    Timesteps are drawn uniformly per element (pass `ts`/`zs` to pin them);
    `bank` may be any object with predict(x_t, t, cond).
    """
    return _rfddm_core(clean, cond, bank, sched, rng, ts, zs, backward=False)


def rfddm_loss_backward(clean: np.ndarray, cond, bank: DenoiserBank, sched: NoiseSchedule,
                        rng: RngStream, ts=None, zs=None) -> float:
    """As rfddm_loss, accumulating gradients on the bank's parameters."""
    return _rfddm_core(clean, cond, bank, sched, rng, ts, zs, backward=True)


def _rfddm_core(clean, cond, bank, sched, rng, ts, zs, backward: bool) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 2:
        raise ValueError(f"clean batch must be (n, d), got shape {clean.shape}")
    n, d = clean.shape
    x_content, v_i, v_c = _check_condition(cond, n, d, np.asarray(cond[1]).shape[-1])
    ts, zs = _draw_training_noise(n, d, sched.T, rng, ts, zs)

    total = 0.0
    for t in np.unique(ts):
        idx = np.flatnonzero(ts == t)
        x_t = diffuse_closed(clean[idx], int(t), zs[idx], sched)
        group_cond = (x_content[idx], v_i[idx], v_c[idx])
        z_hat = bank.predict(x_t, int(t), group_cond)
        resid = z_hat - zs[idx]
        total += float(np.sum(resid * resid))
        if backward:
            bank.predict_backward(int(t), 2.0 * resid / n)
    return total / n


def rfddm_loss_all_timesteps(clean: np.ndarray, cond, bank, sched: NoiseSchedule,
                             rng: RngStream) -> float:
    """The literal sum over every timestep (practical only for tiny T)."""
    clean = np.asarray(clean, dtype=np.float64)
    n = clean.shape[0]
    total = 0.0
    for t in range(1, sched.T + 1):
        total += rfddm_loss(clean, cond, bank, sched, rng,
                            ts=np.full(n, t, dtype=np.intp))
    return total
