"""Semi-supervised active-learning workbench for joint NLU."""

from .corpus import (
    Annotation,
    Example,
    Utterance,
    Vocabulary,
    build_vocab,
    load_split,
    write_split,
)
from .embeddings import EmbeddingMatrix, load_pretrained
from .model import JointNluModel, Posteriors, TokenBatch, build_model, make_batch, predict
from .sampling import sample_regime
from .trainer import RunConfig, fit, total_loss
from .metrics import MetricsReport, evaluate
from .vat import VatConfig, compute_r_vadv, kl_divergence, vat_loss
from .al import ConfidenceRecord, QuerySpec, entropy, joint_confidence, score_pool, select

__version__ = "0.1.0"

__all__ = [
    "Annotation", "Example", "Utterance", "Vocabulary",
    "build_vocab", "load_split", "write_split",
    "EmbeddingMatrix", "load_pretrained",
    "JointNluModel", "Posteriors", "TokenBatch", "build_model", "make_batch", "predict",
    "sample_regime",
    "RunConfig", "fit", "total_loss",
    "MetricsReport", "evaluate",
    "VatConfig", "compute_r_vadv", "kl_divergence", "vat_loss",
    "ConfidenceRecord", "QuerySpec", "entropy", "joint_confidence", "score_pool", "select",
    "__version__",
]
