"""Desk-scale end-to-end trainer: synthetic paired features, linear encoders,
and gradient descent on the joint contrastive + distillation objective.

The point of this module is to exercise the objectives, not to model real
encoders: linear maps are the smallest setting where contrastive geometry
and relation distillation interact measurably. The designated healthy class
stands in for fixed-content health reports; with `duplicate_text` its text
rows are byte-identical, which is exactly the situation where vanilla
contrastive learning manufactures false negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import relation_values
from .errors import ConfigError, DataError
from .losses import PositiveSetMap, distill_loss, roco_loss
from .retrieval import retrieve

HEALTHY_CLASS = 0


@dataclass
class SyntheticDataset:
    """Paired image/text features with class structure."""

    image_features: np.ndarray  # n x p
    text_features: np.ndarray  # n x q
    class_of: np.ndarray  # n ints
    image_prototypes: np.ndarray  # k x p, noise-free class signals
    text_prototypes: np.ndarray  # k x q
    duplicate_text: bool
    healthy_class: int = HEALTHY_CLASS

    @property
    def n(self) -> int:
        return self.image_features.shape[0]

    @property
    def k(self) -> int:
        return self.image_prototypes.shape[0]

    def healthy_mask(self) -> np.ndarray:
        return self.class_of == self.healthy_class


@dataclass
class LinearEncoder:
    weight: np.ndarray  # d x input_dim
    bias: np.ndarray  # d

    def encode(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight.T + self.bias


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.2
    batch_size: int = 0  # 0 means full batch
    temperature: float = 0.07
    lambda_dist: float = 1.0
    seed: int = 0
    use_roco: bool = True
    use_distill: bool = True
    embed_dim: int = 16

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate < 0:
            raise ConfigError("epochs must be positive and learning_rate nonnegative")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.lambda_dist < 0:
            raise ConfigError("lambda_dist must be nonnegative")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be 0 (full batch) or positive")


@dataclass
class EpochLoss:
    epoch: int
    contrastive: float
    distill: float
    total: float


@dataclass
class TrainResult:
    image_encoder: LinearEncoder
    text_encoder: LinearEncoder
    loss_trace: list[EpochLoss]
    image_embeddings: np.ndarray
    text_embeddings: np.ndarray
    teacher_embeddings: np.ndarray
    grouped_recall_at_1: float
    relation_gap_initial: float
    relation_gap_final: float


def make_synthetic(
    k: int,
    n: int,
    p: int,
    q: int,
    noise: float,
    seed: int,
    duplicate_text: bool = True,
    healthy_text_jitter: float = 0.0,
    healthy_count: int | None = None,
) -> SyntheticDataset:
    """Class prototypes plus Gaussian noise.

    Classes are assigned round-robin unless `healthy_count` is given, in
    which case the first `healthy_count` samples form the healthy class and
    the rest spread over classes 1..k-1 (one-per-class when n-healthy_count
    equals k-1, modeling unique abnormal cases).

    With `duplicate_text`, every healthy-class text row equals the healthy
    text prototype exactly; `healthy_text_jitter` > 0 relaxes that to
    near-duplicates (same content, slightly different wording), which is the
    regime where false negatives actually bite.
    """
    if k < 2 or n < k:
        raise ConfigError(f"need k >= 2 and n >= k, got k={k}, n={n}")
    if healthy_count is None:
        class_of = np.arange(n) % k
    else:
        if healthy_count < 1 or n - healthy_count < k - 1:
            raise ConfigError(
                f"healthy_count={healthy_count} leaves too few samples for {k - 1} abnormal classes"
            )
        class_of = np.concatenate(
            [np.zeros(healthy_count, dtype=int), np.arange(n - healthy_count) % (k - 1) + 1]
        )
    rng = np.random.default_rng(seed)
    image_prototypes = rng.standard_normal((k, p))
    text_prototypes = rng.standard_normal((k, q))
    image_features = image_prototypes[class_of] + noise * rng.standard_normal((n, p))
    text_features = text_prototypes[class_of] + noise * rng.standard_normal((n, q))
    if duplicate_text:
        healthy = class_of == HEALTHY_CLASS
        shared = text_prototypes[HEALTHY_CLASS]
        if healthy_text_jitter > 0.0:
            text_features[healthy] = shared + healthy_text_jitter * rng.standard_normal(
                (int(healthy.sum()), q)
            )
        else:
            text_features[healthy] = shared
    return SyntheticDataset(
        image_features=image_features,
        text_features=text_features,
        class_of=class_of,
        image_prototypes=image_prototypes,
        text_prototypes=text_prototypes,
        duplicate_text=duplicate_text,
    )


def make_teacher(dataset: SyntheticDataset, d: int, seed: int) -> np.ndarray:
    """Frozen expert embeddings: a fixed random linear map of the noise-free
    class prototypes, so rows of the same class are identical and class
    separation is perfect by construction."""
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((d, dataset.image_prototypes.shape[1]))
    weight /= math.sqrt(dataset.image_prototypes.shape[1])
    clean = dataset.image_prototypes[dataset.class_of]
    return clean @ weight.T


def batch_positive_sets(class_of: np.ndarray, healthy_class: int, use_roco: bool) -> PositiveSetMap:
    """Healthy samples are mutually positive under the robust loss; every
    other sample keeps only itself."""
    n = len(class_of)
    if not use_roco:
        return PositiveSetMap.singletons(n)
    healthy = [i for i in range(n) if class_of[i] == healthy_class]
    healthy_set = set(healthy)
    sets = []
    for i in range(n):
        if i in healthy_set:
            sets.append(tuple(healthy))
        else:
            sets.append((i,))
    return PositiveSetMap(n=n, sets=tuple(sets))


def grouped_recall_at_1(
    image_embeddings: np.ndarray,
    text_embeddings: np.ndarray,
    class_of: np.ndarray,
    healthy_class: int = HEALTHY_CLASS,
) -> float:
    """Top-1 retrieval recall where any healthy gallery text counts as a hit
    for a healthy query image."""
    results = retrieve(image_embeddings, text_embeddings, k=1)
    hits = 0
    for res in results:
        i, j = res.query_index, res.matched_index
        if j == i or (
            class_of[i] == healthy_class and class_of[j] == healthy_class
        ):
            hits += 1
    return hits / len(results)


def train(
    dataset: SyntheticDataset,
    config: TrainConfig,
    teacher: np.ndarray | None = None,
) -> TrainResult:
    """Plain gradient descent on L_contrastive + lambda * L_distill.

    Deterministic for a fixed seed; aborts with a diagnostic if the loss
    leaves the finite range. The distillation term uses mean reduction so
    lambda_dist stays comparable across batch sizes.
    """
    # distinct stream from make_teacher(seed), which would otherwise hand the
    # student the teacher's own random map as its init
    rng = np.random.default_rng([config.seed, 1])
    n = dataset.n
    d = config.embed_dim
    p = dataset.image_features.shape[1]
    q = dataset.text_features.shape[1]
    img_enc = LinearEncoder(rng.standard_normal((d, p)) / math.sqrt(p), np.zeros(d))
    txt_enc = LinearEncoder(rng.standard_normal((d, q)) / math.sqrt(q), np.zeros(d))
    if teacher is None:
        teacher = make_teacher(dataset, d, config.seed)
    elif teacher.shape != (n, d):
        raise ConfigError(f"teacher shape {teacher.shape} != ({n}, {d})")

    relation_gap_initial = float(
        np.linalg.norm(relation_values(img_enc.encode(dataset.image_features)) - relation_values(teacher))
    )

    batch = config.batch_size if 0 < config.batch_size < n else n
    trace: list[EpochLoss] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        roco_sum = 0.0
        dist_sum = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            x_img = dataset.image_features[idx]
            x_txt = dataset.text_features[idx]
            emb_img = img_enc.encode(x_img)
            emb_txt = txt_enc.encode(x_txt)
            pmap = batch_positive_sets(
                dataset.class_of[idx], dataset.healthy_class, config.use_roco
            )
            roco_out = roco_loss(emb_img, emb_txt, pmap, config.temperature)
            grad_img = roco_out.gradients["img"]
            grad_txt = roco_out.gradients["txt"]
            dist_value = 0.0
            if config.use_distill and config.lambda_dist > 0:
                dist_out = distill_loss(emb_img, teacher[idx], reduction="mean")
                dist_value = dist_out.value
                grad_img = grad_img + config.lambda_dist * dist_out.gradients["student"]
            total = roco_out.value + config.lambda_dist * dist_value
            if not math.isfinite(total) or total > 1e12:
                raise DataError(
                    f"training diverged at epoch {epoch} (loss={total}); lower the learning rate"
                )
            lr = config.learning_rate
            img_enc.weight -= lr * (grad_img.T @ x_img)
            img_enc.bias -= lr * grad_img.sum(axis=0)
            txt_enc.weight -= lr * (grad_txt.T @ x_txt)
            txt_enc.bias -= lr * grad_txt.sum(axis=0)
            roco_sum += roco_out.value * len(idx)
            dist_sum += dist_value * len(idx)
        trace.append(
            EpochLoss(
                epoch=epoch,
                contrastive=roco_sum / n,
                distill=dist_sum / n,
                total=(roco_sum + config.lambda_dist * dist_sum) / n,
            )
        )

    image_embeddings = img_enc.encode(dataset.image_features)
    text_embeddings = txt_enc.encode(dataset.text_features)
    recall = grouped_recall_at_1(
        image_embeddings, text_embeddings, dataset.class_of, dataset.healthy_class
    )
    relation_gap_final = float(
        np.linalg.norm(relation_values(image_embeddings) - relation_values(teacher))
    )
    return TrainResult(
        image_encoder=img_enc,
        text_encoder=txt_enc,
        loss_trace=trace,
        image_embeddings=image_embeddings,
        text_embeddings=text_embeddings,
        teacher_embeddings=teacher,
        grouped_recall_at_1=recall,
        relation_gap_initial=relation_gap_initial,
        relation_gap_final=relation_gap_final,
    )


@dataclass
class AblationRow:
    seed: int
    recall_roco: float
    recall_infonce: float


def ablation_config() -> TrainConfig:
    """Trainer settings for the false-negative ablation.

    Mini-batches matter here: per-batch self-only targets give the plain
    contrastive loss noisier text-side updates than the group-spread robust
    targets, and that variance gap is what degrades its retrieval. The
    distillation term is off so the comparison isolates the contrastive
    objectives.
    """
    return TrainConfig(
        epochs=400,
        learning_rate=0.5,
        batch_size=8,
        temperature=0.07,
        lambda_dist=0.0,
        use_distill=False,
        embed_dim=16,
    )


def run_ablation(
    seeds,
    n: int = 200,
    healthy_count: int = 100,
    p: int = 24,
    q: int = 24,
    noise: float = 0.1,
    healthy_text_jitter: float = 0.05,
    config: TrainConfig | None = None,
) -> list[AblationRow]:
    """Grouped recall@1 with the robust loss vs plain contrastive, per seed.

    Each seed draws a fresh dataset: one healthy block with near-duplicate
    texts plus unique abnormal cases. Both trainings share the dataset and
    differ only in positive-set construction.
    """
    base = config or ablation_config()
    k = n - healthy_count + 1
    rows = []
    for seed in seeds:
        dataset = make_synthetic(
            k,
            n,
            p,
            q,
            noise,
            seed=seed,
            duplicate_text=True,
            healthy_text_jitter=healthy_text_jitter,
            healthy_count=healthy_count,
        )
        cfg_on = _config_with(base, seed=seed, use_roco=True)
        cfg_off = _config_with(base, seed=seed, use_roco=False)
        rows.append(
            AblationRow(
                seed=seed,
                recall_roco=train(dataset, cfg_on).grouped_recall_at_1,
                recall_infonce=train(dataset, cfg_off).grouped_recall_at_1,
            )
        )
    return rows


def _config_with(base: TrainConfig, **overrides) -> TrainConfig:
    fields = {
        "epochs": base.epochs,
        "learning_rate": base.learning_rate,
        "batch_size": base.batch_size,
        "temperature": base.temperature,
        "lambda_dist": base.lambda_dist,
        "seed": base.seed,
        "use_roco": base.use_roco,
        "use_distill": base.use_distill,
        "embed_dim": base.embed_dim,
    }
    fields.update(overrides)
    return TrainConfig(**fields)


def gradcheck(loss_name: str, rows: int = 8, dim: int = 16, seed: int = 0) -> float:
    """Max relative error between analytic and central finite-difference
    gradients (step 1e-5) on seeded random inputs."""
    from .losses import infonce_loss

    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rows, dim))
    b = rng.standard_normal((rows, dim))
    step = 1e-5

    if loss_name == "roco":
        sets = []
        for i in range(rows):
            if i % 3 == 0 and i + 1 < rows:
                sets.append(tuple(sorted({i, i + 1})))
            elif i % 3 == 1 and i - 1 >= 0:
                sets.append(tuple(sorted({i - 1, i})))
            else:
                sets.append((i,))
        pmap = PositiveSetMap(n=rows, sets=tuple(sets))
        fn = lambda x, y: roco_loss(x, y, pmap, t=0.2).value
        out = roco_loss(a, b, pmap, t=0.2)
        pairs = [(a, out.gradients["img"], lambda x: fn(x, b)), (b, out.gradients["txt"], lambda y: fn(a, y))]
    elif loss_name == "infonce":
        fn = lambda x, y: infonce_loss(x, y, t=0.2).value
        out = infonce_loss(a, b, t=0.2)
        pairs = [(a, out.gradients["img"], lambda x: fn(x, b)), (b, out.gradients["txt"], lambda y: fn(a, y))]
    elif loss_name == "distill":
        out = distill_loss(a, b, reduction="sum")
        pairs = [(a, out.gradients["student"], lambda x: distill_loss(x, b, reduction="sum").value)]
    else:
        raise ConfigError(f"unknown loss {loss_name!r}; expected roco, infonce, or distill")

    worst = 0.0
    for x, analytic, scalar_fn in pairs:
        numeric = np.zeros_like(x)
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                xp = x.copy()
                xm = x.copy()
                xp[i, j] += step
                xm[i, j] -= step
                numeric[i, j] = (scalar_fn(xp) - scalar_fn(xm)) / (2 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
