"""Zero-shot region-feature synthesis toolkit.

Builds a zero-shot classifier for unseen classes by learning disentangled
semantic representations from domain corpora, training a conditioned 1D
denoising diffusion model over region features, selecting representative
synthesized features, and merging seen/unseen classifier heads.
"""

from .benchmark import Benchmark, BenchmarkSpec, gen_benchmark
from .classifier import (
    ClassifierHead, EvalReport, harmonic_mean, merge_and_evaluate, merge_heads,
    train_seen_classifier, train_unseen_classifier,
)
from .config import RunConfig, load_config, parse_config, serialize_config
from .data import FeatureBank, FeatureDataset
from .diffusion import (
    DenoiserBank, NoiseSchedule, build_schedule, diffuse_closed, diffuse_step, predict_mu,
    predict_noise, reverse_step, rfddm_loss, sample,
)
from .pipeline import (
    LossWeights, SynthesizerState, TrainSettings, select_features, synthesize_unseen,
    train_synthesizer,
)
from .rng import RngStream, sample_gaussian
from .sampling import SamplingConfig, kmeans_select
from .semantic import (
    AttentionMask, BranchAE, Corpus, SemanticTable, angular_loss, branch_reconstruct,
    branch_semantics, cosine_similarity, lexical_mask_init,
)
from .synth import (
    ContentEncoder, ContentGenerator, FusionDecoder, adain, classifier_alignment_loss,
    content_encode, fuse, generate_content, semantic_diverging_loss, wgan_losses,
)

__version__ = "0.1.0"
