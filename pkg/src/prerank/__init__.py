"""Decoupled two-tower pre-ranking: gated towers, bidirectional gated
cross-attention, max-cosine scoring, and a hybrid listwise training
objective over funnel-sampled lists."""

from .autodiff import Tensor, finite_difference_check, no_grad
from .cascade import (
    CascadeConfig,
    ListGroup,
    SyntheticWorld,
    WorldConfig,
    aggregate_hard_label,
    assemble_list_group,
    generate_synthetic_world,
    split_dataset,
    train_teacher,
)
from .features import Bucketizer, EmbeddingBank, FeatureSchema, Row, fit_bucketizer
from .interaction import cross_attend, gau, maxsim_score
from .losses import (
    HybridWeights,
    ListScores,
    distillation_loss,
    hybrid_loss,
    margin_rankmax_loss,
    rankmax_loss,
    softsort,
    sorting_loss,
)
from .metrics import EvalReport, ndcg_at_k, recall_at_k
from .model import ModelConfig, PreRankingModel
from .serving import EmbeddingStore, OnlineScorer, export_embeddings, load_store
from .towers import tower_forward
from .trainer import TrainConfig, Trainer, evaluate_model, load_model

__version__ = "0.1.0"
