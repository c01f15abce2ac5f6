"""Feature synthesizer building blocks: adversarial content generation, per-branch
content encoders, AdaIN fusion, and the adversarial loss family.

The generator maps (noise, class vector) to a visual content vector in feature
space; the critic scores (feature, class vector) pairs. Content encoders mix a
noise-slot vector with the content and one branch's semantics; the fusion
decoder re-statisticizes the ingredient path onto the cuisine path with AdaIN.
"""

from __future__ import annotations

import numpy as np

from .classifier import ClassifierHead, softmax, label_indices
from .nn import MLP, Param, sigmoid
from .rng import RngStream

ADAIN_STD_FLOOR = 1e-6
DIVERGING_FLOOR = 1e-6
GRADIENT_PENALTY_WEIGHT = 10.0


def _concat_forward(mlp: MLP, *parts: np.ndarray) -> np.ndarray:
    return mlp.forward(np.concatenate(parts, axis=1))


def _split(grad: np.ndarray, widths: list[int]) -> list[np.ndarray]:
    out = []
    start = 0
    for w in widths:
        out.append(grad[:, start:start + w])
        start += w
    return out


def _check_width(name: str, arr: np.ndarray, width: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"{name} must be (batch, {width}), got shape {arr.shape}")
    return arr


class ContentGenerator:
    """Adversarial pair: content generator G(z, v) -> X and critic D(x, v) -> score."""

    def __init__(self, feature_dim: int, semantic_dim: int, hidden: int = 64,
                 rng: RngStream | None = None, name: str = "adv"):
        self.d = feature_dim
        self.s = semantic_dim
        self.gen = MLP([feature_dim + semantic_dim, hidden, hidden, feature_dim],
                       ["leaky_relu", "leaky_relu", "identity"], rng=rng, name=f"{name}.gen")
        self.critic = MLP([feature_dim + semantic_dim, hidden, hidden, 1],
                          ["leaky_relu", "leaky_relu", "identity"], rng=rng, name=f"{name}.critic")

    def gen_params(self) -> list[Param]:
        return self.gen.params()

    def critic_params(self) -> list[Param]:
        return self.critic.params()


def generate_content(gen: ContentGenerator, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    z = _check_width("noise z", z, gen.d)
    v = _check_width("class vectors v", v, gen.s)
    return _concat_forward(gen.gen, z, v)


def generate_content_backward(gen: ContentGenerator, d_x: np.ndarray,
                              accumulate: bool = True) -> np.ndarray:
    """Backprop through the most recent generate_content call; returns d_z."""
    d_in = gen.gen.backward(d_x, accumulate=accumulate)
    return d_in[:, :gen.d]


def critic_score(gen: ContentGenerator, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    x = _check_width("features", x, gen.d)
    v = _check_width("class vectors v", v, gen.s)
    return _concat_forward(gen.critic, x, v)


class ContentEncoder:
    """N = DEC(ENC(z (.) x (.) v) (.) x (.) v) with explicit slot widths.

    The noise slot takes either sampled noise or a diffusion state x_t; `extra`
    widens the content slot for an appended timestep embedding.
    """

    def __init__(self, noise_dim: int, content_dim: int, semantic_dim: int,
                 out_dim: int, latent: int | None = None, rng: RngStream | None = None,
                 name: str = "content"):
        if latent is None:
            latent = out_dim
        self.noise_dim = noise_dim
        self.content_dim = content_dim
        self.semantic_dim = semantic_dim
        self.out_dim = out_dim
        self.latent = latent
        enc_in = noise_dim + content_dim + semantic_dim
        dec_in = latent + content_dim + semantic_dim
        self.enc = MLP([enc_in, (enc_in + latent) // 2, latent], ["leaky_relu", "leaky_relu"],
                       rng=rng, name=f"{name}.enc")
        self.dec = MLP([dec_in, (dec_in + out_dim) // 2, out_dim], ["leaky_relu", "identity"],
                       rng=rng, name=f"{name}.dec")

    def params(self) -> list[Param]:
        return self.enc.params() + self.dec.params()


def content_encode(ce: ContentEncoder, z: np.ndarray, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    z = _check_width("noise slot", z, ce.noise_dim)
    x = _check_width("content slot", x, ce.content_dim)
    v = _check_width("semantic slot", v, ce.semantic_dim)
    latent = _concat_forward(ce.enc, z, x, v)
    return _concat_forward(ce.dec, latent, x, v)


def content_encode_backward(ce: ContentEncoder, d_out: np.ndarray, accumulate: bool = True):
    """Backprop through the most recent content_encode call.

    Returns (d_z, d_x, d_v) with the content/semantic contributions from both
    concatenation sites summed.
    """
    d_dec_in = ce.dec.backward(d_out, accumulate=accumulate)
    d_latent, d_x2, d_v2 = _split(d_dec_in, [ce.latent, ce.content_dim, ce.semantic_dim])
    d_enc_in = ce.enc.backward(d_latent, accumulate=accumulate)
    d_z, d_x1, d_v1 = _split(d_enc_in, [ce.noise_dim, ce.content_dim, ce.semantic_dim])
    return d_z, d_x1 + d_x2, d_v1 + d_v2


def _row_stats(x: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    return mu, np.sqrt(var)


def adain(content: np.ndarray, style: np.ndarray, std_floor: float = ADAIN_STD_FLOOR):
    """Re-statisticize `content` rows to carry `style`'s per-row mean and sigma.

    Accepts single vectors or batches; statistics are population moments over
    the feature coordinates of each row.
    """
    single = np.asarray(content).ndim == 1
    c = np.atleast_2d(np.asarray(content, dtype=np.float64))
    st = np.atleast_2d(np.asarray(style, dtype=np.float64))
    if c.shape != st.shape:
        raise ValueError(f"adain inputs must share shape, got {c.shape} and {st.shape}")
    if std_floor <= 0:
        raise ValueError(f"std floor must be positive, got {std_floor}")
    mu_c, sig_c = _row_stats(c)
    mu_s, sig_s = _row_stats(st)
    out = sig_s * (c - mu_c) / np.maximum(sig_c, std_floor) + mu_s
    return out[0] if single else out


def adain_with_cache(content: np.ndarray, style: np.ndarray, std_floor: float = ADAIN_STD_FLOOR):
    """Batched adain returning (out, cache) for the backward pass."""
    c = np.asarray(content, dtype=np.float64)
    st = np.asarray(style, dtype=np.float64)
    mu_c, sig_c = _row_stats(c)
    mu_s, sig_s = _row_stats(st)
    sig_eff = np.maximum(sig_c, std_floor)
    norm = (c - mu_c) / sig_eff
    out = sig_s * norm + mu_s
    cache = (c, st, mu_s, sig_s, sig_c, sig_eff, norm, std_floor)
    return out, cache


def adain_backward(d_out: np.ndarray, cache):
    """Gradients of adain wrt (content, style)."""
    c, st, mu_s, sig_s, sig_c, sig_eff, norm, std_floor = cache
    e = c.shape[1]
    d_norm = d_out * sig_s

    clamped = sig_c <= std_floor
    mean_dn = d_norm.mean(axis=1, keepdims=True)
    mean_dn_norm = (d_norm * norm).mean(axis=1, keepdims=True)
    # population-std backprop; when the std clamp binds, the sigma path vanishes
    d_c = np.where(clamped,
                   (d_norm - mean_dn) / sig_eff,
                   (d_norm - mean_dn - norm * mean_dn_norm) / sig_eff)

    d_sig_s = (d_out * norm).sum(axis=1, keepdims=True)
    d_mu_s = d_out.sum(axis=1, keepdims=True)
    centered_s = st - st.mean(axis=1, keepdims=True)
    sig_s_safe = np.maximum(sig_s, 1e-300)
    d_st = d_mu_s / e + np.where(sig_s > 0, d_sig_s * centered_s / (e * sig_s_safe), 0.0)
    return d_c, d_st


class FusionDecoder:
    """linear -> AdaIN(. , style) -> linear -> AdaIN(. , style) -> head.

    After forward(), `adain_outputs` holds the two post-AdaIN activations so the
    per-sample statistics contract can be inspected.
    """

    def __init__(self, content_dim: int, feature_dim: int, rng: RngStream | None = None,
                 std_floor: float = ADAIN_STD_FLOOR, name: str = "fusion"):
        self.e = content_dim
        self.d = feature_dim
        self.std_floor = std_floor
        self.lin1 = MLP([content_dim, content_dim], ["leaky_relu"], rng=rng, name=f"{name}.lin1")
        self.lin2 = MLP([content_dim, content_dim], ["leaky_relu"], rng=rng, name=f"{name}.lin2")
        self.head = MLP([content_dim, feature_dim], ["identity"], rng=rng, name=f"{name}.head")
        self.adain_outputs: tuple[np.ndarray, np.ndarray] | None = None
        self._cache = None

    def params(self) -> list[Param]:
        return self.lin1.params() + self.lin2.params() + self.head.params()

    def forward(self, content: np.ndarray, style: np.ndarray) -> np.ndarray:
        content = _check_width("fusion content", content, self.e)
        style = _check_width("fusion style", style, self.e)
        h1 = self.lin1.forward(content)
        a1, cache1 = adain_with_cache(h1, style, self.std_floor)
        h2 = self.lin2.forward(a1)
        a2, cache2 = adain_with_cache(h2, style, self.std_floor)
        out = self.head.forward(a2)
        self.adain_outputs = (a1, a2)
        self._cache = (cache1, cache2)
        return out

    def backward(self, d_out: np.ndarray, accumulate: bool = True):
        """Returns (d_content, d_style); style gradients sum over both AdaIN blocks."""
        if self._cache is None:
            raise RuntimeError("fusion backward called without a preceding forward")
        cache1, cache2 = self._cache
        d_a2 = self.head.backward(d_out, accumulate=accumulate)
        d_h2, d_style2 = adain_backward(d_a2, cache2)
        d_a1 = self.lin2.backward(d_h2, accumulate=accumulate)
        d_h1, d_style1 = adain_backward(d_a1, cache1)
        d_content = self.lin1.backward(d_h1, accumulate=accumulate)
        return d_content, d_style1 + d_style2


def fuse(fd: FusionDecoder, content_batch: np.ndarray, style_batch: np.ndarray) -> np.ndarray:
    """Fusion decoder over a batch of (ingredient content, cuisine content) rows."""
    return fd.forward(content_batch, style_batch)


# ---------------------------------------------------------------------------
# adversarial losses


def _critic_input_grads(critic: MLP, u: np.ndarray, feature_dim: int) -> np.ndarray:
    """Per-sample gradient of the critic score wrt the feature slot of its input."""
    scores = critic.forward(u)
    d_in = critic.backward(np.ones_like(scores), accumulate=False)
    return d_in[:, :feature_dim]


def _gp_value_and_tangent(critic: MLP, u: np.ndarray, feature_dim: int):
    """Gradient penalty at interpolates plus the tangent direction for its backward."""
    g = _critic_input_grads(critic, u, feature_dim)
    norms = np.linalg.norm(g, axis=1)
    gp = float(np.mean((norms - 1.0) ** 2))
    n = u.shape[0]
    safe = np.maximum(norms, 1e-12)
    coeff = 2.0 * (norms - 1.0) / (n * safe)
    coeff[norms < 1e-12] = 0.0
    r = np.zeros_like(u)
    r[:, :feature_dim] = coeff[:, None] * g
    return gp, r


def _gp_param_grads(critic: MLP, u: np.ndarray, r: np.ndarray, weight: float) -> None:
    """Accumulate d/dtheta of the gradient penalty via a forward-over-reverse pass.

    Valid for identity/leaky-relu layers, whose activations have zero second
    derivative almost everywhere (so no curvature terms survive).
    """
    caches = []
    h = u
    th = r
    for layer in critic.layers:
        if layer.activation == "sigmoid":
            raise ValueError("gradient penalty supports identity/leaky-relu critics only")
        pre = h @ layer.w.value.T + layer.b.value
        act_grad = np.where(pre >= 0.0, 1.0, layer.slope) if layer.activation == "leaky_relu" \
            else np.ones_like(pre)
        ta = th @ layer.w.value.T
        caches.append((th, act_grad))
        h = np.where(pre >= 0.0, pre, layer.slope * pre) if layer.activation == "leaky_relu" else pre
        th = act_grad * ta

    if critic.layers[-1].activation != "identity":
        raise ValueError("critic must end with an identity layer")
    eps = np.ones((u.shape[0], 1))
    for i in reversed(range(len(critic.layers))):
        layer = critic.layers[i]
        th_prev, act_grad = caches[i]
        layer.w.grad += weight * (eps.T @ th_prev)
        if i > 0:
            d_th_prev = eps @ layer.w.value
            eps = caches[i - 1][1] * d_th_prev


def wgan_losses(gen: ContentGenerator, real: np.ndarray, fake: np.ndarray, v: np.ndarray,
                penalty_weight: float = GRADIENT_PENALTY_WEIGHT,
                rng: RngStream | None = None) -> tuple[float, float]:
    """Conditional Wasserstein critic/generator loss values (no gradients)."""
    real = _check_width("real features", real, gen.d)
    fake = _check_width("fake features", fake, gen.d)
    v = _check_width("class vectors v", v, gen.s)
    if real.shape[0] != fake.shape[0]:
        raise ValueError(f"real/fake batch sizes differ: {real.shape[0]} vs {fake.shape[0]}")
    score_fake = float(np.mean(critic_score(gen, fake, v)))
    score_real = float(np.mean(critic_score(gen, real, v)))
    mix = rng.uniform((real.shape[0], 1)) if rng is not None else np.full((real.shape[0], 1), 0.5)
    interp = mix * real + (1.0 - mix) * fake
    gp, _ = _gp_value_and_tangent(gen.critic, np.concatenate([interp, v], axis=1), gen.d)
    critic_loss = score_fake - score_real + penalty_weight * gp
    gen_loss = -score_fake
    return critic_loss, gen_loss


def critic_loss_backward(gen: ContentGenerator, real: np.ndarray, fake: np.ndarray,
                         v: np.ndarray, penalty_weight: float = GRADIENT_PENALTY_WEIGHT,
                         rng: RngStream | None = None) -> float:
    """Critic loss with parameter gradients accumulated on the critic."""
    n = real.shape[0]
    s_fake = critic_score(gen, fake, v)
    gen.critic.backward(np.full_like(s_fake, 1.0 / n))
    s_real = critic_score(gen, real, v)
    gen.critic.backward(np.full_like(s_real, -1.0 / n))

    mix = rng.uniform((n, 1)) if rng is not None else np.full((n, 1), 0.5)
    interp = mix * real + (1.0 - mix) * fake
    u = np.concatenate([interp, v], axis=1)
    gp, tangent = _gp_value_and_tangent(gen.critic, u, gen.d)
    _gp_param_grads(gen.critic, u, tangent, penalty_weight)
    return float(np.mean(s_fake)) - float(np.mean(s_real)) + penalty_weight * gp


def generator_adv_backward(gen: ContentGenerator, fake: np.ndarray, v: np.ndarray):
    """Generator-side Wasserstein term: returns (loss, d_fake), critic untouched."""
    scores = critic_score(gen, fake, v)
    d_in = gen.critic.backward(np.full_like(scores, -1.0 / scores.shape[0]), accumulate=False)
    return float(-np.mean(scores)), d_in[:, :gen.d]


def classifier_alignment_loss(head: ClassifierHead, x: np.ndarray, labels) -> float:
    loss, _ = classifier_alignment_grad(head, x, labels)
    return loss


def classifier_alignment_grad(head: ClassifierHead, x: np.ndarray, labels):
    """Cross-entropy of the frozen seen head on synthesized features.

    Returns (loss, d_x); gradients flow into the features, never into the head.
    """
    x = np.asarray(x, dtype=np.float64)
    y = label_indices(labels, head.class_ids)
    probs = softmax(head.logits(x))
    picked = np.maximum(probs[np.arange(len(y)), y], 1e-12)
    loss = float(-np.mean(np.log(picked)))
    dlogits = probs.copy()
    dlogits[np.arange(len(y)), y] -= 1.0
    d_x = dlogits @ head.weights / len(y)
    return loss, d_x


def semantic_diverging_loss(x1: np.ndarray, x2: np.ndarray, z1: np.ndarray, z2: np.ndarray,
                            floor: float = DIVERGING_FLOOR) -> float:
    loss, _, _ = semantic_diverging_grad(x1, x2, z1, z2, floor)
    return loss


def semantic_diverging_grad(x1: np.ndarray, x2: np.ndarray, z1: np.ndarray, z2: np.ndarray,
                            floor: float = DIVERGING_FLOOR):
    """Mode-seeking ratio penalty: mean |z1-z2|_1 / (|x1-x2|_1 + floor).

    Collapsed outputs (x1 == x2) are maximally penalized. Returns
    (loss, d_x1, d_x2).
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ValueError(f"feature batches must share shape, got {x1.shape} and {x2.shape}")
    n = x1.shape[0]
    num = np.abs(np.asarray(z1) - np.asarray(z2)).sum(axis=1)
    den = np.abs(x1 - x2).sum(axis=1) + floor
    loss = float(np.mean(num / den))
    scale = (num / (den * den) / n)[:, None]
    sign = np.sign(x1 - x2)
    d_x1 = -scale * sign
    return loss, d_x1, -d_x1
