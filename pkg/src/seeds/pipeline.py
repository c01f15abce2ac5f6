"""End-to-end synthesizer: alternating adversarial/branch/denoiser training,
unseen-feature synthesis, representative selection, and evaluation wiring.

Per training iteration the critic takes several update steps, then the
generator (Wasserstein + alignment + diverging terms), the two branch
autoencoders (angular losses against their corpora), and the denoiser bank
(denoising MSE on a conditioned sub-batch) each take one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierHead, train_seen_classifier
from .data import FeatureBank, FeatureDataset
from .diffusion import DenoiserBank, NoiseSchedule, build_schedule, rfddm_loss_backward, sample
from .nn import Param, zero_grads
from .optim import Adam
from .rng import RngStream
from .sampling import SamplingConfig, kmeans_select
from .semantic import (
    AttentionMask, BranchAE, Corpus, SemanticTable, angular_loss_grad, lexical_mask_init,
    mask_sparsity_penalty, merge_corpora,
)
from .synth import (
    ContentGenerator, classifier_alignment_grad, critic_loss_backward, generate_content,
    generate_content_backward, generator_adv_backward, semantic_diverging_grad,
)

log = logging.getLogger(__name__)

LOSS_CURVE_FIELDS = ("epoch", "l_ang1", "l_ang2", "l_adv", "l_r", "l_total")


@dataclass
class LossWeights:
    """Weights for the angular, adversarial, and reconstruction terms."""

    angular: float = 1.0
    adversarial: float = 1.0
    reconstruction: float = 0.1

    def __post_init__(self):
        if min(self.angular, self.adversarial, self.reconstruction) < 0:
            raise ValueError("loss weights must be non-negative")

    def total(self, l_ang1: float, l_ang2: float, l_adv: float, l_r: float) -> float:
        return (self.angular * (l_ang1 + l_ang2) + self.adversarial * l_adv
                + self.reconstruction * l_r)


@dataclass
class TrainSettings:
    epochs: int = 40
    batch_size: int = 128
    critic_steps: int = 5
    denoiser_batch: int = 64
    denoiser_timesteps: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-5
    gen_hidden: int = 64
    denoiser_mode: str = "per-timestep"
    schedule_steps: int = 100
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2
    content_dim: int | None = None
    single_branch: bool = False
    learnable_masks: bool = False
    seed: int = 0


class SynthesizerState:
    """Everything trainable plus the streams that drive training and synthesis."""

    def __init__(self, table: SemanticTable, ingredient_corpus: Corpus, cuisine_corpus: Corpus,
                 class_names: dict[str, str], feature_dim: int, settings: TrainSettings):
        self.table = table
        self.class_names = dict(class_names)
        self.settings = settings
        self.d = feature_dim
        self.s = table.dim
        self.e = settings.content_dim or feature_dim
        self.single_branch = settings.single_branch

        init_rng = RngStream(settings.seed).spawn(1)
        self.train_rng = RngStream(settings.seed).spawn(2)
        self.synth_rng = RngStream(settings.seed).spawn(3)

        mask_mode = "learnable" if settings.learnable_masks else "fixed-lexical"
        if settings.single_branch:
            merged = merge_corpora(ingredient_corpus, cuisine_corpus)
            self.corpora = (merged, merged)
            self.branches = (BranchAE(self.s, rng=init_rng, name="branch.merged"),) * 2
            self.masks = (lexical_mask_init(self.class_names, merged, mask_mode),) * 2
        else:
            self.corpora = (ingredient_corpus, cuisine_corpus)
            self.branches = (BranchAE(self.s, rng=init_rng, name="branch.ing"),
                             BranchAE(self.s, rng=init_rng, name="branch.cui"))
            self.masks = (lexical_mask_init(self.class_names, ingredient_corpus, mask_mode),
                          lexical_mask_init(self.class_names, cuisine_corpus, mask_mode))

        self.adversarial = ContentGenerator(self.d, self.s, hidden=settings.gen_hidden, rng=init_rng)
        # the diffusion runs over standardized features so its N(0, I) prior is in range
        self.feat_mean = np.zeros(self.d)
        self.feat_std = np.ones(self.d)
        self.schedule: NoiseSchedule = build_schedule(settings.schedule_steps,
                                                      settings.beta_start, settings.beta_end)
        self.bank = DenoiserBank(self.schedule.T, self.d, self.s, self.e,
                                 mode=settings.denoiser_mode, rng=init_rng)
        self.seen_head: ClassifierHead | None = None
        self.unseen_head: ClassifierHead | None = None
        self.epochs_done = 0

        lr, wd = settings.lr, settings.weight_decay
        self.opt_branches = [Adam(b.params(), lr=lr, weight_decay=wd)
                             for b in self._unique_branches()]
        self.opt_gen = Adam(self.adversarial.gen_params(), lr=lr, weight_decay=wd)
        self.opt_critic = Adam(self.adversarial.critic_params(), lr=lr, weight_decay=wd)
        self.opt_bank = Adam(self.bank.params(), lr=lr, weight_decay=wd)
        self.opt_masks = Adam([m.logits for m in self._unique_masks()], lr=lr, weight_decay=0.0) \
            if settings.learnable_masks else None

    def _unique_branches(self) -> list[BranchAE]:
        return [self.branches[0]] if self.single_branch else list(self.branches)

    def _unique_masks(self) -> list[AttentionMask]:
        return [self.masks[0]] if self.single_branch else list(self.masks)

    def branch_semantics(self, class_ids) -> tuple[np.ndarray, np.ndarray]:
        v = self.table.matrix(class_ids)
        return self.branches[0].forward(v), self.branches[1].forward(v)

    def set_feature_stats(self, features: np.ndarray) -> None:
        self.feat_mean = features.mean(axis=0)
        self.feat_std = np.maximum(features.std(axis=0), 1e-6)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feat_mean) / self.feat_std

    def unstandardize(self, features: np.ndarray) -> np.ndarray:
        return features * self.feat_std + self.feat_mean

    def trainable_params(self) -> list[Param]:
        params = [p for b in self._unique_branches() for p in b.params()]
        params += [m.logits for m in self._unique_masks()]
        params += self.adversarial.gen_params() + self.adversarial.critic_params()
        params += self.bank.params()
        return params

    def named_arrays(self) -> dict[str, np.ndarray]:
        """All state needed for a bit-exact resume, keyed for the checkpoint."""
        out = {p.name: p.value for p in self.trainable_params()}
        out["feat.mean"] = self.feat_mean
        out["feat.std"] = self.feat_std
        if self.seen_head is not None:
            out["head.seen.w"] = self.seen_head.weights
            out["head.seen.b"] = self.seen_head.bias
            out["head.seen.classes"] = encode_class_ids(self.seen_head.class_ids)
        if self.unseen_head is not None:
            out["head.unseen.w"] = self.unseen_head.weights
            out["head.unseen.b"] = self.unseen_head.bias
            out["head.unseen.classes"] = encode_class_ids(self.unseen_head.class_ids)
        out["rng.train.state"] = self.train_rng.state()
        out["rng.synth.state"] = self.synth_rng.state()
        out["progress.epochs"] = np.array([float(self.epochs_done)])
        for i, opt in enumerate(self.opt_branches):
            out.update(opt.state_arrays(f"opt.branch{i}"))
        out.update(self.opt_gen.state_arrays("opt.gen"))
        out.update(self.opt_critic.state_arrays("opt.critic"))
        out.update(self.opt_bank.state_arrays("opt.bank"))
        if self.opt_masks is not None:
            out.update(self.opt_masks.state_arrays("opt.masks"))
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.trainable_params():
            if p.name not in arrays:
                raise ValueError(f"checkpoint is missing parameter {p.name!r}")
            if arrays[p.name].shape != p.value.shape:
                raise ValueError(f"checkpoint array {p.name!r} has shape {arrays[p.name].shape}, "
                                 f"model expects {p.value.shape}")
            p.value[...] = arrays[p.name]
        self.feat_mean = arrays["feat.mean"].copy()
        self.feat_std = arrays["feat.std"].copy()
        if "head.seen.w" in arrays:
            self.seen_head = ClassifierHead(decode_class_ids(arrays["head.seen.classes"]),
                                            arrays["head.seen.w"], arrays["head.seen.b"])
        if "head.unseen.w" in arrays:
            self.unseen_head = ClassifierHead(decode_class_ids(arrays["head.unseen.classes"]),
                                              arrays["head.unseen.w"], arrays["head.unseen.b"])
        self.train_rng.set_state(arrays["rng.train.state"])
        self.synth_rng.set_state(arrays["rng.synth.state"])
        self.epochs_done = int(arrays["progress.epochs"][0])
        for i, opt in enumerate(self.opt_branches):
            opt.load_state_arrays(f"opt.branch{i}", arrays)
        self.opt_gen.load_state_arrays("opt.gen", arrays)
        self.opt_critic.load_state_arrays("opt.critic", arrays)
        self.opt_bank.load_state_arrays("opt.bank", arrays)
        if self.opt_masks is not None:
            self.opt_masks.load_state_arrays("opt.masks", arrays)


def encode_class_ids(items) -> np.ndarray:
    return np.frombuffer("\n".join(items).encode("utf-8"), dtype=np.uint8).copy()


def decode_class_ids(arr: np.ndarray) -> tuple[str, ...]:
    return tuple(bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8").split("\n"))


def init_synthesizer(seen_train: FeatureDataset, table: SemanticTable,
                     ingredient_corpus: Corpus, cuisine_corpus: Corpus,
                     class_names: dict[str, str], settings: TrainSettings,
                     seen_head: ClassifierHead | None = None) -> SynthesizerState:
    for cid in seen_train.class_ids:
        if cid not in table.vectors:
            raise ValueError(f"dataset class {cid!r} missing from the semantic table")
    state = SynthesizerState(table, ingredient_corpus, cuisine_corpus, class_names,
                             seen_train.dim, settings)
    state.set_feature_stats(seen_train.features)
    state.seen_head = seen_head if seen_head is not None else train_seen_classifier(
        seen_train, lr=0.05, seed=settings.seed)
    return state


def _branch_update(state: SynthesizerState, branch_idx: int, class_ids,
                   weight: float) -> float:
    branch = state.branches[branch_idx]
    corpus = state.corpora[branch_idx]
    mask = state.masks[branch_idx]
    v = state.table.matrix(class_ids)
    rows = mask.rows(class_ids)
    recon = branch.forward(v)
    loss, d_recon, d_rows = angular_loss_grad(recon, corpus, rows)
    branch.backward(weight * d_recon)
    if state.opt_masks is not None:
        soft = rows
        d_logits_rows = weight * d_rows * soft * (1.0 - soft)
        idx = mask.row_indices(class_ids)
        np.add.at(mask.logits.grad, idx, d_logits_rows)
    return loss


def _mask_sparsity_update(state: SynthesizerState) -> None:
    for mask in state._unique_masks():
        _, d_logits = mask_sparsity_penalty(mask)
        mask.logits.grad += d_logits


def train_epochs(state: SynthesizerState, seen_train: FeatureDataset,
                 weights: LossWeights, epochs: int) -> list[dict[str, float]]:
    """Run `epochs` passes over seen-train; returns one loss row per epoch."""
    settings = state.settings
    n = len(seen_train)
    batch = min(settings.batch_size, n)
    iters = max(n // batch, 1)
    rng = state.train_rng
    curve = []

    for _ in range(epochs):
        epoch_idx = state.epochs_done + 1
        sums = {"l_ang1": 0.0, "l_ang2": 0.0, "l_adv": 0.0, "l_r": 0.0}
        perm = rng.permutation(n)
        for it in range(iters):
            rows = perm[it * batch:(it + 1) * batch]
            x_real = seen_train.features[rows]
            labels = [seen_train.labels[i] for i in rows]
            v = state.table.matrix(labels)

            if weights.adversarial > 0:
                for _step in range(settings.critic_steps):
                    z = rng.normal((len(rows), state.d))
                    x_fake = generate_content(state.adversarial, z, v)
                    state.opt_critic.zero_grad()
                    critic_loss_backward(state.adversarial, x_real, x_fake, v, rng=rng)
                    state.opt_critic.step()

                state.opt_gen.zero_grad()
                z1 = rng.normal((len(rows), state.d))
                z2 = rng.normal((len(rows), state.d))
                x2 = generate_content(state.adversarial, z2, v)
                x1 = generate_content(state.adversarial, z1, v)
                l_w, d_x1 = generator_adv_backward(state.adversarial, x1, v)
                l_c, d_align = classifier_alignment_grad(state.seen_head, x1, labels)
                l_s, d_div1, d_div2 = semantic_diverging_grad(x1, x2, z1, z2)
                generate_content_backward(state.adversarial,
                                          weights.adversarial * (d_x1 + d_align + d_div1))
                generate_content(state.adversarial, z2, v)  # restore caches for the z2 path
                generate_content_backward(state.adversarial, weights.adversarial * d_div2)
                state.opt_gen.step()
                sums["l_adv"] += l_w + l_c + l_s

            if weights.angular > 0:
                batch_classes = sorted(set(labels))
                for opt in state.opt_branches:
                    opt.zero_grad()
                if state.opt_masks is not None:
                    state.opt_masks.zero_grad()
                sums["l_ang1"] += _branch_update(state, 0, batch_classes, weights.angular)
                if not state.single_branch:
                    sums["l_ang2"] += _branch_update(state, 1, batch_classes, weights.angular)
                if state.opt_masks is not None:
                    _mask_sparsity_update(state)
                    state.opt_masks.step()
                for opt in state.opt_branches:
                    opt.step()

            if weights.reconstruction > 0:
                # each element's timestep is uniform on {1..T}; drawing a handful of
                # timesteps per iteration and a full sub-batch for each keeps every
                # per-timestep parameter set fed without per-element dispatch
                m = min(settings.denoiser_batch, len(rows))
                draws = rng.integers(1, state.schedule.T + 1, (settings.denoiser_timesteps,))
                sub = rng.permutation(len(rows))[:m]
                x_clean = state.standardize(x_real[sub])
                v_sub = v[sub]
                labels_sub = [labels[i] for i in sub]
                z = rng.normal((m, state.d))
                x_cond = generate_content(state.adversarial, z, v_sub)
                v_i, v_c = state.branch_semantics(labels_sub)
                clean_rep = np.tile(x_clean, (settings.denoiser_timesteps, 1))
                cond_rep = (np.tile(x_cond, (settings.denoiser_timesteps, 1)),
                            np.tile(v_i, (settings.denoiser_timesteps, 1)),
                            np.tile(v_c, (settings.denoiser_timesteps, 1)))
                ts = np.repeat(draws, m)
                state.opt_bank.zero_grad()
                l_r = rfddm_loss_backward(clean_rep, cond_rep, state.bank, state.schedule,
                                          rng, ts=ts)
                for p in state.bank.params():
                    p.grad *= weights.reconstruction
                state.opt_bank.step()
                sums["l_r"] += l_r

        row = {k: val / iters for k, val in sums.items()}
        row["epoch"] = float(epoch_idx)
        row["l_total"] = weights.total(row["l_ang1"], row["l_ang2"], row["l_adv"], row["l_r"])
        if not np.isfinite(row["l_total"]):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch_idx}: {row}")
        curve.append(row)
        state.epochs_done = epoch_idx
        log.info("epoch %d: ang1=%.4f ang2=%.4f adv=%.4f r=%.4f total=%.4f", epoch_idx,
                 row["l_ang1"], row["l_ang2"], row["l_adv"], row["l_r"], row["l_total"])
    return curve


def train_synthesizer(seen_train: FeatureDataset, table: SemanticTable,
                      ingredient_corpus: Corpus, cuisine_corpus: Corpus,
                      class_names: dict[str, str], weights: LossWeights | None = None,
                      settings: TrainSettings | None = None,
                      seen_head: ClassifierHead | None = None):
    """Train all synthesizer components; returns (state, loss curve)."""
    weights = weights or LossWeights()
    settings = settings or TrainSettings()
    state = init_synthesizer(seen_train, table, ingredient_corpus, cuisine_corpus,
                             class_names, settings, seen_head)
    curve = train_epochs(state, seen_train, weights, settings.epochs)
    return state, curve


def synthesize_unseen(state: SynthesizerState, per_class: int,
                      class_ids=None) -> FeatureBank:
    """Sample `per_class` region features for each unseen class via the reverse chain."""
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    class_ids = tuple(class_ids) if class_ids is not None else state.table.unseen
    for cid in class_ids:
        if cid not in state.table.vectors:
            raise ValueError(f"unseen class {cid!r} missing from the semantic table")
    rng = state.synth_rng
    out = {}
    for cid in class_ids:
        v = np.tile(state.table.vectors[cid], (per_class, 1))
        z = rng.normal((per_class, state.d))
        x_cond = generate_content(state.adversarial, z, v)
        v_i = state.branches[0].forward(v)
        v_c = state.branches[1].forward(v)
        drawn = sample(state.bank, (x_cond, v_i, v_c), state.schedule, rng, per_class)
        out[cid] = state.unstandardize(drawn)
    return FeatureBank(out)


def select_features(bank: FeatureBank, cfg: SamplingConfig) -> FeatureBank:
    """Per-class K-means selection; every class keeps exactly clusters*per_cluster rows."""
    selected = {}
    for offset, (cid, block) in enumerate(bank.rows.items()):
        per_class_cfg = SamplingConfig(cfg.clusters, cfg.per_cluster, cfg.max_iterations,
                                       seed=cfg.seed + offset)
        sel = kmeans_select(block, per_class_cfg)
        selected[cid] = block[sel.indices]
    return FeatureBank(selected)
