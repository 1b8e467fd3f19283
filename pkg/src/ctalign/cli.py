"""Command-line interface.

Every subcommand is a thin shell over a library function. The primary stream
(stdout or --out file) carries machine-readable TSV prefixed with a config
echo (# key=value lines, defaults included), so a run can be reproduced from
its output alone; diagnostics go to stderr. Identical argv and inputs produce
byte-identical primary output.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import losses as losses_mod
from . import masking as masking_mod
from . import metrics as metrics_mod
from . import retrieval as retrieval_mod
from . import toytrain as toytrain_mod
from .embeddings import EmbeddingMatrix, HUWindow, hu_normalize, read_embeddings, write_embeddings
from .errors import ConfigError, CtalignError
from .labeler import ENTITIES, KeywordTable, extract_labels, is_healthy_report
from .rng import mix_seed

logger = logging.getLogger("ctalign")

SUBCOMMANDS = (
    "retrieve",
    "zeroshot",
    "roco",
    "distill",
    "label",
    "healthy",
    "mask",
    "eval-report",
    "eval-nlp",
    "train-toy",
    "gradcheck",
    "hu-normalize",
    "emb-info",
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems via exceptions, so the
    top-level dispatcher controls the exit code."""

    def error(self, message):
        if "invalid choice" in message:
            bad = message.split("'")[1] if "'" in message else ""
            close = difflib.get_close_matches(bad, SUBCOMMANDS, n=1)
            if close:
                message += f" (did you mean {close[0]!r}?)"
        raise UsageError(f"{self.prog}: {message}")


def fmt(x: float) -> str:
    return f"{x:.9f}"


class Output:
    """Primary-stream writer: config echo first, then rows."""

    def __init__(self, out_path: str | None):
        self._lines: list[str] = []
        self.out_path = out_path

    def echo_config(self, subcommand: str, args: argparse.Namespace, extra=()):
        self._lines.append(f"# ctalign {subcommand}")
        skip = {"func", "subcommand"}
        for key in sorted(vars(args)):
            if key in skip:
                continue
            self._lines.append(f"# {key}={getattr(args, key)}")
        for line in extra:
            self._lines.append(f"# {line}")

    def row(self, *cells):
        self._lines.append("\t".join(str(c) for c in cells))

    def comment(self, text: str):
        self._lines.append(f"# {text}")

    def flush(self):
        text = "\n".join(self._lines) + "\n"
        if self.out_path and self.out_path != "-":
            Path(self.out_path).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


def _load_positives(path: str | None, n: int) -> losses_mod.PositiveSetMap:
    if path is None:
        return losses_mod.PositiveSetMap.singletons(n)
    with open(path, "r", encoding="utf-8") as fh:
        sets = json.load(fh)
    if not isinstance(sets, list):
        raise ConfigError("positives file must hold a JSON list of index lists")
    return losses_mod.PositiveSetMap.from_lists(sets)


def _dump_gradients(gradients: dict, prefix: str) -> None:
    for name, grad in gradients.items():
        write_embeddings(EmbeddingMatrix(grad), f"{prefix}.{name}.emb")


def cmd_retrieve(args) -> int:
    queries = read_embeddings(args.queries)
    gallery = read_embeddings(args.gallery)
    results = retrieval_mod.retrieve(queries, gallery, k=args.k)
    out = Output(args.out)
    out.echo_config("retrieve", args)
    out.row("query_index", "matched_index", "score")
    for res in results:
        out.row(res.query_index, res.matched_index, fmt(res.score))
    out.flush()
    if args.topk_out:
        top = Output(args.topk_out)
        top.row("query_index", "rank", "gallery_index", "score")
        for res in results:
            for rank, (j, score) in enumerate(res.top_k):
                top.row(res.query_index, rank, j, fmt(score))
        top.flush()
    return 0


def cmd_zeroshot(args) -> int:
    image = read_embeddings(args.image)
    pos = read_embeddings(args.pos)
    neg = read_embeddings(args.neg)
    if pos.rows != 1 or neg.rows != 1:
        raise ConfigError("prompt embedding files must hold exactly one row")
    extra = []
    if args.entity is not None:
        pair = retrieval_mod.PromptPair(
            entity=args.entity,
            positive_template=args.pos_template,
            negative_template=args.neg_template,
        )
        rendered = retrieval_mod.render_prompts(pair, args.entity)
        extra = [f"positive_prompt={rendered[0]}", f"negative_prompt={rendered[1]}"]
    out = Output(args.out)
    out.echo_config("zeroshot", args, extra)
    out.row("index", "probability", "present")
    for i in range(image.rows):
        p = retrieval_mod.zero_shot_probability(
            image.data[i], pos.data[0], neg.data[0], t=args.temperature
        )
        out.row(i, fmt(p), int(p > 0.5))
    out.flush()
    return 0


def cmd_roco(args) -> int:
    img = read_embeddings(args.img)
    txt = read_embeddings(args.txt)
    positives = _load_positives(args.positives, img.rows)
    result = losses_mod.roco_loss(img, txt, positives, t=args.temperature)
    out = Output(args.out)
    out.echo_config("roco", args)
    out.row("loss", fmt(result.value))
    out.flush()
    if args.grad_out:
        _dump_gradients(result.gradients, args.grad_out)
    return 0


def cmd_distill(args) -> int:
    student = read_embeddings(args.student)
    teacher = read_embeddings(args.teacher)
    result = losses_mod.distill_loss(student, teacher, reduction=args.reduction)
    out = Output(args.out)
    out.echo_config("distill", args)
    out.row("loss", fmt(result.value))
    out.flush()
    if args.grad_out:
        _dump_gradients(result.gradients, args.grad_out)
    return 0


def _keyword_table(path: str | None) -> KeywordTable:
    return KeywordTable.from_json(path) if path else KeywordTable()


def cmd_label(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    table = _keyword_table(args.keywords)
    out = Output(args.out)
    out.echo_config("label", args)
    out.row("id", *ENTITIES)
    for rec in corpus:
        labels = extract_labels(rec, table)
        out.row(rec.id, *labels.vector())
    out.flush()
    return 0


def cmd_healthy(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    out = Output(args.out)
    out.echo_config("healthy", args)
    out.row("id", "healthy")
    for rec in corpus:
        out.row(rec.id, int(is_healthy_report(rec)))
    out.flush()
    return 0


def cmd_mask(args) -> int:
    corpus = corpus_mod.load_corpus(args.corpus)
    lexicon = (
        masking_mod.PhraseLexicon.from_json(args.lexicon)
        if args.lexicon
        else masking_mod.PhraseLexicon()
    )
    rates = (args.entity_rate, args.random_rate, args.max_mask_fraction)
    out = Output(args.out)
    out.echo_config("mask", args)
    plans = []
    for position, rec in enumerate(corpus):
        seed = mix_seed(args.seed, position)
        plan = masking_mod.plan_mask(rec.tokens, lexicon, rates, seed)
        masked = masking_mod.apply_mask(rec.tokens, plan, args.mask_symbol)
        out.row(rec.id, " ".join(masked))
        plans.append(
            {
                "id": rec.id,
                "seed": seed,
                "rates": list(rates),
                "masked_spans": [list(s) for s in plan.masked_spans],
                "strategy_tags": plan.strategy_tags,
            }
        )
    out.flush()
    plan_path = args.plan_out or (args.out + ".plan.jsonl" if args.out else None)
    if plan_path:
        with open(plan_path, "w", encoding="utf-8") as fh:
            for plan in plans:
                fh.write(json.dumps(plan) + "\n")
    return 0


def cmd_eval_report(args) -> int:
    generated = corpus_mod.load_corpus(args.generated)
    reference = corpus_mod.load_corpus(args.reference)
    table = _keyword_table(args.keywords)
    counts, rows = metrics_mod.eval_reports(generated, reference, table)
    out = Output(args.out)
    out.echo_config("eval-report", args)
    out.row("entity", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "zero_division")
    for entity in ENTITIES:
        c = counts.counts[entity]
        r = rows[entity]
        out.row(
            entity,
            c["tp"],
            c["fp"],
            c["fn"],
            c["tn"],
            fmt(r.precision),
            fmt(r.recall),
            fmt(r.f1),
            ",".join(r.zero_division_flags) or "-",
        )
    macro = rows[metrics_mod.MACRO]
    out.row("macro", "", "", "", "", fmt(macro.precision), fmt(macro.recall), fmt(macro.f1), "-")
    out.flush()
    if args.out:
        _print_prf_table(rows)
    if args.fig:
        from .plotting import save_prf1_bars

        save_prf1_bars(rows, args.fig)
    return 0


def _print_prf_table(rows) -> None:
    names = list(ENTITIES) + [metrics_mod.MACRO]
    width = max(len(n) for n in names)
    print(f"{'entity':<{width}}  precision  recall  f1")
    for name in names:
        r = rows[name]
        print(f"{name:<{width}}  {r.precision:9.3f}  {r.recall:6.3f}  {r.f1:6.3f}")


def cmd_eval_nlp(args) -> int:
    generated = corpus_mod.load_corpus(args.generated)
    reference = corpus_mod.load_corpus(args.reference)
    mean, per_report, stats = metrics_mod.eval_nlp(generated, reference)
    out = Output(args.out)
    out.echo_config("eval-nlp", args)
    out.comment("cider variant: CIDEr-D style (sigma=6, x10 scaling)")
    out.comment("meteor variant: exact-match unigrams, no stemming or synonyms")
    if stats.num_docs < 2:
        out.comment("warning: idf degenerate (fewer than 2 reference documents)")
    out.row("metric", "value")
    out.row("bleu4", fmt(mean.bleu4))
    out.row("rouge_l", fmt(mean.rouge_l))
    out.row("cider", fmt(mean.cider))
    out.row("meteor", fmt(mean.meteor))
    out.flush()
    if args.per_report:
        per = Output(args.per_report)
        per.row("id", "bleu4", "rouge_l", "cider", "meteor")
        for rid in reference.ids():
            s = per_report[rid]
            per.row(rid, fmt(s.bleu4), fmt(s.rouge_l), fmt(s.cider), fmt(s.meteor))
        per.flush()
    if args.fig:
        from .plotting import save_nlp_bars

        save_nlp_bars(mean, args.fig)
    return 0


DEFAULT_TOY_CONFIG = {
    "dataset": {
        "k": 4,
        "n": 200,
        "p": 24,
        "q": 24,
        "noise": 0.5,
        "seed": 0,
        "duplicate_text": True,
    },
    "train": {},
    "ablation": {"enabled": True, "seeds": [0, 1, 2, 3, 4]},
}


def cmd_train_toy(args) -> int:
    config = json.loads(json.dumps(DEFAULT_TOY_CONFIG))
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            user = json.load(fh)
        for section in ("dataset", "train", "ablation"):
            config[section].update(user.get(section, {}))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dataset = toytrain_mod.make_synthetic(**config["dataset"])
    train_cfg = toytrain_mod.TrainConfig(**config["train"])
    result = toytrain_mod.train(dataset, train_cfg)

    resolved = dict(config)
    resolved["train"] = {
        field: getattr(train_cfg, field)
        for field in (
            "epochs",
            "learning_rate",
            "batch_size",
            "temperature",
            "lambda_dist",
            "seed",
            "use_roco",
            "use_distill",
            "embed_dim",
        )
    }
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2) + "\n", encoding="utf-8")

    loss_out = Output(str(out_dir / "loss.tsv"))
    loss_out.row("epoch", "contrastive", "distill", "total")
    for e in result.loss_trace:
        loss_out.row(e.epoch, fmt(e.contrastive), fmt(e.distill), fmt(e.total))
    loss_out.flush()

    write_embeddings(EmbeddingMatrix(result.image_embeddings), out_dir / "image_embeddings.emb")
    write_embeddings(EmbeddingMatrix(result.text_embeddings), out_dir / "text_embeddings.emb")
    write_embeddings(EmbeddingMatrix(result.teacher_embeddings), out_dir / "teacher_embeddings.emb")

    summary = Output(str(out_dir / "summary.tsv"))
    summary.row("quantity", "value")
    summary.row("grouped_recall_at_1", fmt(result.grouped_recall_at_1))
    summary.row("relation_gap_initial", fmt(result.relation_gap_initial))
    summary.row("relation_gap_final", fmt(result.relation_gap_final))
    summary.flush()

    if not args.no_figures:
        from .plotting import save_loss_curves

        save_loss_curves(result.loss_trace, out_dir / "loss.png")

    if config["ablation"].get("enabled", True):
        ab_kwargs = {
            key: config["ablation"][key]
            for key in ("n", "healthy_count", "p", "q", "noise", "healthy_text_jitter")
            if key in config["ablation"]
        }
        ab_config = None
        if config["ablation"].get("train"):
            ab_config = toytrain_mod.TrainConfig(**config["ablation"]["train"])
        rows = toytrain_mod.run_ablation(
            seeds=config["ablation"]["seeds"], config=ab_config, **ab_kwargs
        )
        ab_out = Output(str(out_dir / "ablation.tsv"))
        ab_out.row("seed", "recall_roco", "recall_infonce", "gap")
        for row in rows:
            ab_out.row(
                row.seed,
                fmt(row.recall_roco),
                fmt(row.recall_infonce),
                fmt(row.recall_roco - row.recall_infonce),
            )
        ab_out.flush()
        if not args.no_figures:
            from .plotting import save_ablation_bars

            save_ablation_bars(rows, out_dir / "ablation.png")

    print(f"wrote training outputs to {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    error = toytrain_mod.gradcheck(args.loss, rows=args.rows, dim=args.dim, seed=args.seed)
    out = Output(args.out)
    out.echo_config("gradcheck", args)
    out.row("max_relative_error", fmt(error))
    out.flush()
    return 0


def cmd_hu_normalize(args) -> int:
    window = HUWindow(low=args.low, high=args.high)
    out = Output(args.out)
    out.echo_config("hu-normalize", args)
    out.row("hu", "normalized")
    for v in args.values:
        out.row(v, fmt(hu_normalize(v, window)))
    out.flush()
    return 0


def cmd_emb_info(args) -> int:
    matrix = read_embeddings(args.file)
    out = Output(args.out)
    out.echo_config("emb-info", args)
    out.row("rows", matrix.rows)
    out.row("dim", matrix.dim)
    out.row("normalized", int(matrix.normalized))
    out.flush()
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="ctalign", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand", parser_class=Parser)

    p = sub.add_parser("retrieve", help="cosine argmax retrieval")
    p.add_argument("--queries", required=True, help="query embedding file")
    p.add_argument("--gallery", required=True, help="gallery embedding file")
    p.add_argument("-k", type=int, default=1, help="top-k list size")
    p.add_argument("--out", default=None, help="primary TSV path (default stdout)")
    p.add_argument("--topk-out", default=None, help="optional per-rank TSV path")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("zeroshot", help="prompt-pair classification")
    p.add_argument("--image", required=True, help="image embedding file (one row per case)")
    p.add_argument("--pos", required=True, help="positive prompt embedding (single row)")
    p.add_argument("--neg", required=True, help="negative prompt embedding (single row)")
    p.add_argument("-t", "--temperature", type=float, default=1.0)
    p.add_argument("--entity", default=None, help="echo rendered prompt templates for this entity")
    p.add_argument("--pos-template", default=retrieval_mod.DEFAULT_POSITIVE_TEMPLATE)
    p.add_argument("--neg-template", default=retrieval_mod.DEFAULT_NEGATIVE_TEMPLATE)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("roco", help="robust contrastive loss")
    p.add_argument("--img", required=True)
    p.add_argument("--txt", required=True)
    p.add_argument("--positives", default=None, help="JSON list of positive index lists")
    p.add_argument("-t", "--temperature", type=float, default=0.07)
    p.add_argument("--grad-out", default=None, help="prefix for gradient dumps")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_roco)

    p = sub.add_parser("distill", help="dual distillation loss")
    p.add_argument("--student", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--reduction", choices=("sum", "mean"), default="sum")
    p.add_argument("--grad-out", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("label", help="pathology keyword labeling")
    p.add_argument("--corpus", required=True)
    p.add_argument("--keywords", default=None, help="keyword table JSON (defaults built in)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("healthy", help="health-phrase detection")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_healthy)

    p = sub.add_parser("mask", help="entity-focused mask planning")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", default=None, help="phrase lexicon JSON (defaults built in)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entity-rate", type=float, default=masking_mod.DEFAULT_RATES[0])
    p.add_argument("--random-rate", type=float, default=masking_mod.DEFAULT_RATES[1])
    p.add_argument("--max-mask-fraction", type=float, default=masking_mod.DEFAULT_RATES[2])
    p.add_argument("--mask-symbol", default=masking_mod.MASK_SYMBOL)
    p.add_argument("--out", default=None)
    p.add_argument("--plan-out", default=None, help="plan sidecar path (JSONL)")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("eval-report", help="per-pathology P/R/F1")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--keywords", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--fig", default=None, help="write a P/R/F1 bar chart PNG")
    p.set_defaults(func=cmd_eval_report)

    p = sub.add_parser("eval-nlp", help="generation metrics")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--per-report", default=None, help="per-report scores TSV path")
    p.add_argument("--fig", default=None, help="write a metric bar chart PNG")
    p.set_defaults(func=cmd_eval_nlp)

    p = sub.add_parser("train-toy", help="synthetic end-to-end training")
    p.add_argument("--config", default=None, help="JSON with dataset/train/ablation sections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference validation")
    p.add_argument("--loss", choices=("roco", "infonce", "distill"), required=True)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("hu-normalize", help="HU window mapping")
    p.add_argument("values", nargs="+", type=float, help="HU values")
    p.add_argument("--low", type=float, default=-1150.0)
    p.add_argument("--high", type=float, default=350.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_hu_normalize)

    p = sub.add_parser("emb-info", help="embedding file header")
    p.add_argument("file", help="embedding file path")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_emb_info)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=os.environ.get("CTALIGN_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("ctalign: a subcommand is required (see --help)")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"ctalign: configuration error: {exc}", file=sys.stderr)
        return 1
    except CtalignError as exc:
        print(f"ctalign: data error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"ctalign: data error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"ctalign: data error: invalid JSON: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
