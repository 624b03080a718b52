"""Article-aware case outcome classification with adversarial domain
adaptation for zero-shot transfer to unseen articles."""

from .corpus import (
    ArticleText,
    Document,
    PairInstance,
    SplitSpec,
    build_pairs,
    gen_synthetic,
    load_corpus,
    make_split,
    truncate,
)
from .embeddings import (
    EmbeddingStore,
    EmbeddingTensor,
    read_store,
    toy_encode,
    write_store,
)
from .model import ArticleAwareModel, FactOnlyModel, ModelConfig
from .adaptation import (
    Adversary,
    clip_critic,
    discriminator_loss,
    grl,
    lambda_schedule,
    wasserstein_loss,
)
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint, train_step
from .evaluation import MetricsReport, evaluate_run, f1_scores, predict_multilabel

__version__ = "0.1.0"
