"""Chest CT report/image alignment toolkit.

Core pieces: embedding primitives and file format, report corpus handling,
keyword pathology labeling, exhaustive cosine retrieval with zero-shot
prompt classification, robust contrastive and dual distillation losses with
analytic gradients, entity-focused mask planning, generation metrics, and a
synthetic end-to-end trainer.
"""

from .corpus import Corpus, ReportRecord, Token, load_corpus, normalize_text, tokenize, write_corpus
from .embeddings import (
    EmbeddingMatrix,
    HUWindow,
    RelationMatrix,
    cosine_similarity,
    hu_normalize,
    read_embeddings,
    relation_matrix,
    write_embeddings,
)
from .labeler import ENTITIES, KeywordTable, PathologyLabels, extract_labels, is_healthy_report
from .losses import (
    LossValue,
    PositiveSetMap,
    build_positive_sets,
    distill_loss,
    infonce_loss,
    roco_loss,
)
from .masking import MaskPlan, PhraseLexicon, apply_mask, find_phrases, plan_mask
from .metrics import (
    ConfusionCounts,
    CorpusNgramStats,
    NlpScores,
    bleu4,
    cider,
    eval_nlp,
    eval_reports,
    meteor_simple,
    prf1,
    rouge_l,
)
from .retrieval import PromptPair, RetrievalResult, render_prompts, retrieve, zero_shot_probability
from .toytrain import (
    LinearEncoder,
    SyntheticDataset,
    TrainConfig,
    TrainResult,
    gradcheck,
    grouped_recall_at_1,
    make_synthetic,
    make_teacher,
    run_ablation,
    train,
)

__version__ = "0.1.0"
