"""Command-line entry point.

Every subcommand resolves its configuration (flags > config file >
defaults), writes its artifacts plus a manifest into ``--out DIR``, and
returns 0 on success, 1 on usage errors (no run directory is created), 2 on
data errors, and 3 on numeric failures. ``HYTREL_SEED`` provides the seed
when neither flag nor config file does.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, synthdata, tasks
from .encoder import EncoderParams, ModelConfig, export_embeddings
from .errors import CheckpointError, CorpusError, HytrelError, MalformedTableError, NumericError
from .hypergraph import PermutationAction, apply_permutation, build_hypergraph
from .numerics import ParamStore
from .seeding import rng_from
from .tables import (RawRecord, Table, TruncationLimits, Vocabulary, build_vocab,
                     iter_corpus, parse_table, write_corpus)
from .training import (TrainConfig, corruption_auc, load_checkpoint, pretrain,
                       sibling_retrieval_top1)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class ToleranceError(NumericError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Run directory bookkeeping: resolved config, content hashes of inputs
    and outputs, and a manifest sufficient to re-run."""

    def __init__(self, out_dir: Path, command: str, argv: list[str]):
        self.out_dir = out_dir
        self.command = command
        self.argv = argv
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.config: dict = {}
        self.started = time.time()

    def note_input(self, path: Path) -> None:
        self.inputs[str(path)] = _sha256(path)

    def emit(self, name: str, text: str | bytes) -> Path:
        path = self.out_dir / name
        if isinstance(text, bytes):
            path.write_bytes(text)
        else:
            path.write_text(text, encoding="utf-8")
        self.outputs[name] = _sha256(path)
        return path

    def note_output(self, path: Path) -> None:
        self.outputs[path.name] = _sha256(path)

    def emit_json(self, name: str, obj) -> Path:
        return self.emit(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def finish(self) -> None:
        self.emit_json("resolved_config.json", self.config)
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "inputs": self.inputs,
            "outputs": dict(sorted(self.outputs.items())),
        }
        (self.out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        # wall time lives outside the manifest: reruns must match bytewise
        (self.out_dir / "timing.json").write_text(
            json.dumps({"seconds": time.time() - self.started}) + "\n", encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: bad config JSON: {exc}") from exc


def _resolve_seed(args, file_cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("HYTREL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"HYTREL_SEED is not an integer: {env!r}") from exc
    return 0


def _model_config(args, file_cfg: dict, **overrides) -> ModelConfig:
    cfg = dict(file_cfg.get("model", {}))
    for key in ("hidden_dim", "heads", "layers", "dropout", "row_init_mode"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**cfg)


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing required {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _limits(file_cfg: dict) -> TruncationLimits:
    return TruncationLimits(**file_cfg.get("limits", {}))


def _read_tables(corpus_path: Path, vocab: Vocabulary,
                 limits: TruncationLimits) -> list[Table]:
    return [parse_table(rec, vocab, limits) for rec in iter_corpus(corpus_path)]


def _study_tables(count: int, seed: int, vocab_size: int = 2048,
                  n_rows: int | None = None, n_cols: int | None = None,
                  ) -> tuple[list[Table], Vocabulary]:
    records = []
    for i in range(count):
        rec, _ = synthdata.typed_table(f"study{i:05d}", rng_from(0x57D, seed, i),
                                       n_rows=n_rows, n_cols=n_cols)
        records.append(rec)
    vocab = build_vocab(records, vocab_size)
    return [parse_table(r, vocab) for r in records], vocab


def _random_params(vocab: Vocabulary, cfg: ModelConfig, seed: int,
                   dtype=np.float64) -> EncoderParams:
    store = ParamStore(dtype)
    return EncoderParams.create(store, len(vocab), cfg, rng_from(seed))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_build_vocab(args, file_cfg: dict, run: Run) -> int:
    corpus = _require_file(args.corpus, "--corpus path")
    run.note_input(corpus)
    vocab = build_vocab(iter_corpus(corpus), args.size)
    out = run.out_dir / "vocab.jsonl"
    vocab.save(out)
    run.note_output(out)
    run.config = {"corpus": str(corpus), "size": args.size}
    print(f"vocabulary of {len(vocab)} tokens -> {out}")
    return 0


def cmd_pretrain(args, file_cfg: dict, run: Run) -> int:
    corpus = _require_file(args.corpus, "--corpus path")
    run.note_input(corpus)
    seed = _resolve_seed(args, file_cfg)
    limits = _limits(file_cfg)
    records = list(iter_corpus(corpus))
    if args.vocab is not None:
        vocab_path = _require_file(args.vocab, "--vocab path")
        run.note_input(vocab_path)
        vocab = Vocabulary.load(vocab_path)
    else:
        vocab = build_vocab(records, args.vocab_size)
    tables = [parse_table(r, vocab, limits) for r in records]
    holdout = args.holdout
    if holdout >= len(tables):
        raise UsageError(f"--holdout {holdout} leaves no training tables")
    train_tables = tables[:len(tables) - holdout] if holdout else tables
    held = tables[len(tables) - holdout:] if holdout else []

    train_cfg = dict(file_cfg.get("train", {}))
    for key in ("batch_size", "learning_rate", "warmup_ratio", "epochs", "weight_decay",
                "precision", "max_steps", "corruption_rate", "view_mask_ratio",
                "temperature"):
        value = getattr(args, key, None)
        if value is not None:
            train_cfg[key] = value
    train_cfg.update({"objective": args.objective, "seed": seed})
    if "learning_rate" not in train_cfg or train_cfg["learning_rate"] is None:
        train_cfg["learning_rate"] = 1e-3 if args.objective == "electra" else 3e-4
    cfg = TrainConfig(**train_cfg)
    model_cfg = _model_config(args, file_cfg)
    run.config = {"model": model_cfg.to_json(), "train": cfg.to_json(),
                  "corpus": str(corpus), "holdout": holdout}

    result = pretrain(train_tables, vocab, model_cfg, cfg, out_dir=run.out_dir)
    for ckpt in result.checkpoints:
        run.note_output(ckpt)
    run.note_output(run.out_dir / "loss_log.csv")

    losses = [row["loss"] for row in result.loss_log]
    window = min(50, len(losses))
    metrics = {
        "steps": len(losses),
        "initial_loss_ma": float(np.mean(losses[:window])),
        "final_loss_ma": float(np.mean(losses[-window:])),
    }
    if held:
        if cfg.objective == "electra":
            metrics["holdout_auc"] = corruption_auc(result.model, held,
                                                    cfg.corruption_rate, seed)
        else:
            metrics["holdout_retrieval_top1"] = sibling_retrieval_top1(
                result.model, held, cfg.view_mask_ratio, seed)
    run.emit_json("metrics.json", metrics)
    print(f"pretrained {cfg.objective} for {len(losses)} steps; "
          f"loss {metrics['initial_loss_ma']:.4f} -> {metrics['final_loss_ma']:.4f}")
    return 0


def cmd_embed(args, file_cfg: dict, run: Run) -> int:
    ckpt_path = _require_file(args.checkpoint, "--checkpoint path")
    corpus = _require_file(args.corpus, "--corpus path")
    run.note_input(ckpt_path)
    run.note_input(corpus)
    ckpt = load_checkpoint(ckpt_path)
    limits = _limits(file_cfg)
    tables = _read_tables(corpus, ckpt.model.vocab, limits)
    out = run.out_dir / "embeddings.jsonl"
    count = export_embeddings(tables, ckpt.model.encoder, out)
    run.note_output(out)
    run.config = {"checkpoint": str(ckpt_path), "corpus": str(corpus)}
    print(f"wrote {count} embedding rows -> {out}")
    return 0


def cmd_synth(args, file_cfg: dict, run: Run) -> int:
    seed = _resolve_seed(args, file_cfg)
    run.config = {"task": args.task, "size": args.size, "seed": seed}
    if args.task == "corpus":
        records = synthdata.synth_corpus(args.size, seed)
        out = run.out_dir / "corpus.jsonl"
        write_corpus(records, out)
        run.note_output(out)
        print(f"wrote {len(records)} tables -> {out}")
        return 0
    suite = tasks.synth_dataset(args.task, args.size, seed)
    records, _ = synthdata.synth_task_records(args.task, args.size, seed,
                                              task_tag=tasks.TASK_KINDS.index(args.task))
    flat = []
    for r in records:
        flat.extend(r if isinstance(r, tuple) else [r])
    corpus_out = run.out_dir / "corpus.jsonl"
    write_corpus(flat, corpus_out)
    labels_out = run.out_dir / "labels.jsonl"
    tasks.write_labels(suite, labels_out)
    run.note_output(corpus_out)
    run.note_output(labels_out)
    print(f"wrote {len(flat)} tables and {len(suite.examples)} labeled examples -> {run.out_dir}")
    return 0


def cmd_finetune(args, file_cfg: dict, run: Run) -> int:
    seed = _resolve_seed(args, file_cfg)
    limits = _limits(file_cfg)
    pretrained = None
    if args.checkpoint is not None:
        ckpt_path = _require_file(args.checkpoint, "--checkpoint path")
        run.note_input(ckpt_path)
        ckpt = load_checkpoint(ckpt_path)
        pretrained = ckpt.model.store.clone_arrays()
        vocab = ckpt.model.vocab
        model_cfg = ckpt.model.config
    else:
        vocab = None
        model_cfg = None

    if args.train_corpus is not None:
        train_corpus = _require_file(args.train_corpus, "--train-corpus path")
        train_labels = _require_file(args.train_labels, "--train-labels path")
        eval_corpus = _require_file(args.eval_corpus, "--eval-corpus path")
        eval_labels = _require_file(args.eval_labels, "--eval-labels path")
        for p in (train_corpus, train_labels, eval_corpus, eval_labels):
            run.note_input(p)
        if vocab is None:
            vocab = build_vocab(iter_corpus(train_corpus), args.vocab_size)
        train_tables = {t.id: t for t in _read_tables(train_corpus, vocab, limits)}
        eval_tables = {t.id: t for t in _read_tables(eval_corpus, vocab, limits)}
        train_suite = tasks.load_labeled_dataset(train_tables, train_labels, args.task, vocab)
        eval_suite = tasks.load_labeled_dataset(eval_tables, eval_labels, args.task, vocab)
        train_examples, eval_examples = train_suite.examples, eval_suite.examples
        label_names = train_suite.label_names
    else:
        suite = tasks.synth_dataset(args.task, args.synth_size, seed, vocab=vocab)
        vocab = suite.vocab
        split = int(len(suite.examples) * 0.8)
        train_examples = suite.examples[:split]
        eval_examples = suite.examples[split:]
        label_names = suite.label_names

    if model_cfg is None:
        model_cfg = _model_config(args, file_cfg)
    ft_cfg = dict(file_cfg.get("finetune", {}))
    for key in ("epochs", "batch_size", "learning_rate", "warmup_ratio",
                "weight_decay", "precision"):
        value = getattr(args, key, None)
        if value is not None:
            ft_cfg[key] = value
    cfg = tasks.FinetuneConfig(seed=seed, **ft_cfg)
    run.config = {"task": args.task, "model": model_cfg.to_json(),
                  "finetune": {"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                               "learning_rate": cfg.learning_rate,
                               "warmup_ratio": cfg.warmup_ratio,
                               "weight_decay": cfg.weight_decay,
                               "precision": cfg.precision, "seed": seed},
                  "labels": list(label_names),
                  "checkpoint": args.checkpoint}

    model = tasks.TaskModel.create(vocab, model_cfg, args.task, len(label_names),
                                   seed=seed, dtype=cfg.dtype, pretrained=pretrained)
    result = tasks.finetune(model, train_examples, eval_examples, cfg)
    preds_out = run.out_dir / "predictions.jsonl"
    tasks.write_predictions(model, eval_examples, preds_out)
    run.note_output(preds_out)
    run.emit_json("metrics.json", {
        "best_epoch": result.best_epoch,
        "best": result.best_metrics.to_json(),
        "history": result.history,
    })
    best = result.best_metrics
    score = best.accuracy if args.task == "ttd" else best.f1
    print(f"{args.task}: best epoch {result.best_epoch}, score {score:.4f}")
    return 0


def cmd_verify_invariance(args, file_cfg: dict, run: Run) -> int:
    seed = _resolve_seed(args, file_cfg)
    dtype = np.float32 if args.precision == "fp32" else np.float64
    tolerance = args.tolerance
    if tolerance is None:
        tolerance = 1e-5 if args.precision == "fp32" else 1e-10
    model_cfg = _model_config(args, file_cfg,
                              row_init_mode="shared" if args.precision == "fp64" else None)
    tables, vocab = _study_tables(args.tables, seed)
    params = _random_params(vocab, model_cfg, seed, dtype)
    report = analysis.permutation_distance_study(tables, params, args.perms,
                                                 rng_from(0x1E4, seed))
    run.emit("distance_report.csv", report.to_csv())
    run.emit_json("distance_report.json", report.to_json())
    worst = report.max_over()
    run.config = {"tables": args.tables, "perms": args.perms, "seed": seed,
                  "precision": args.precision, "tolerance": tolerance,
                  "model": model_cfg.to_json()}
    ok = worst <= tolerance
    print(f"invariance: max matched distance {worst:.3e} "
          f"{'<=' if ok else '>'} tolerance {tolerance:.1e} [{'PASS' if ok else 'FAIL'}]")
    if not ok:
        raise ToleranceError(f"max matched distance {worst:.3e} exceeds {tolerance:.1e}")
    return 0


def cmd_probe_excessive(args, file_cfg: dict, run: Run) -> int:
    seed = _resolve_seed(args, file_cfg)
    # generic parameter draw: near-zero init makes the probe insensitive
    model_cfg = _model_config(args, file_cfg, emb_init_std=0.3)
    tables, vocab = _study_tables(args.tables, seed, n_rows=4, n_cols=4)
    params = _random_params(vocab, model_cfg, seed)
    report = analysis.DistanceReport()
    for i, table in enumerate(tables):
        report.merge(analysis.excessive_invariance_probe(
            table, params, args.shuffles, rng_from(0xE8, seed, i)))
    values = report.samples.get("swap_cross", [])
    moved = sum(v > args.threshold for v in values)
    frac = moved / len(values) if values else 0.0
    run.emit("probe_report.csv", report.to_csv())
    run.emit_json("probe_report.json", {**report.to_json(),
                                        "moved_fraction": frac,
                                        "threshold": args.threshold})
    run.config = {"tables": args.tables, "shuffles": args.shuffles, "seed": seed,
                  "threshold": args.threshold, "model": model_cfg.to_json()}
    ok = frac >= args.min_fraction
    print(f"probe: {moved}/{len(values)} swaps moved the table representation "
          f"beyond {args.threshold:g} [{'PASS' if ok else 'FAIL'}]")
    if not ok:
        raise ToleranceError(
            f"only {frac:.2%} of swaps exceeded {args.threshold:g} "
            f"(need >= {args.min_fraction:.2%})")
    return 0


def cmd_wl_check(args, file_cfg: dict, run: Run) -> int:
    seed = _resolve_seed(args, file_cfg)
    tables, vocab = _study_tables(args.tables, seed)
    violations = []
    results = []
    for i, table in enumerate(tables):
        rng = rng_from(0x31, seed, i)
        hg = build_hypergraph(table)
        action = PermutationAction.random(table.n, table.m, rng)
        orbit_verdict = analysis.wl_isomorphic(
            hg, build_hypergraph(apply_permutation(table, action)))
        rows = [list(r) for r in table.rows]
        rows[0][0] = tuple(rows[0][0]) + (1,)  # tack an UNK token onto one cell
        edited = Table(id=table.id, caption=table.caption, headers=table.headers,
                       rows=tuple(tuple(r) for r in rows))
        edit_verdict = analysis.wl_isomorphic(hg, build_hypergraph(edited))
        results.append({"table_id": table.id,
                        "orbit": orbit_verdict.value, "edited": edit_verdict.value})
        if orbit_verdict is not analysis.WLVerdict.INDISTINGUISHABLE:
            violations.append(f"{table.id}: permuted copy was distinguished")
        if edit_verdict is not analysis.WLVerdict.DISTINGUISHABLE:
            violations.append(f"{table.id}: content edit went unnoticed")
    run.emit_json("wl_report.json", {"results": results, "violations": violations})
    run.config = {"tables": args.tables, "seed": seed}
    print(f"wl-check: {len(tables)} tables, {len(violations)} violations "
          f"[{'PASS' if not violations else 'FAIL'}]")
    if violations:
        raise ToleranceError("; ".join(violations))
    return 0


def cmd_profile(args, file_cfg: dict, run: Run) -> int:
    seed = _resolve_seed(args, file_cfg)
    sizes = []
    for part in args.sizes.split(","):
        n, _, m = part.strip().partition("x")
        sizes.append((int(n), int(m)))
    model_cfg = _model_config(args, file_cfg,
                              hidden_dim=args.hidden_dim if args.hidden_dim else 128)
    rows = analysis.profile_scaling(None, sizes, reps=args.reps, seed=seed,
                                    config=model_cfg)
    # timings are inherently non-reproducible; they go next to, not into,
    # the deterministic outputs
    (run.out_dir / "profile.csv").write_text(analysis.profile_to_csv(rows), encoding="utf-8")
    (run.out_dir / "profile_timing.json").write_text(
        json.dumps(analysis.profile_to_json(rows), indent=2) + "\n", encoding="utf-8")
    run.config = {"sizes": args.sizes, "reps": args.reps, "seed": seed,
                  "model": model_cfg.to_json()}
    ratios = analysis.doubling_ratios(rows)
    print("profile: " + ", ".join(
        f"nm={r.nm}:{r.median_seconds * 1e3:.2f}ms" for r in rows))
    if ratios:
        print("doubling ratios: " + ", ".join(f"{x:.2f}" for x in ratios))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="hytrel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1,
                       help="data-parallel width cap (desk runs are single-process)")

    def model_flags(p):
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--row-init-mode", dest="row_init_mode",
                       choices=("per_table", "shared"))

    p = sub.add_parser("build-vocab", help="build a frequency vocabulary from a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, default=2048)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="run a pretraining objective over a corpus")
    common(p)
    model_flags(p)
    p.add_argument("--objective", choices=("electra", "contrastive"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=2048)
    p.add_argument("--holdout", type=int, default=0)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--warmup-ratio", dest="warmup_ratio", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--precision", choices=("fp32", "fp64"))
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--corruption-rate", dest="corruption_rate", type=float)
    p.add_argument("--view-mask-ratio", dest="view_mask_ratio", type=float)
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="export final-layer embeddings for a corpus")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("synth", help="generate synthetic corpora and task datasets")
    common(p)
    p.add_argument("--task", choices=("corpus",) + tasks.TASK_KINDS, required=True)
    p.add_argument("--size", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("finetune", help="fine-tune a task head (plus encoder)")
    common(p)
    model_flags(p)
    p.add_argument("--task", choices=tasks.TASK_KINDS, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--synth-size", dest="synth_size", type=int, default=200)
    p.add_argument("--train-corpus", dest="train_corpus")
    p.add_argument("--train-labels", dest="train_labels")
    p.add_argument("--eval-corpus", dest="eval_corpus")
    p.add_argument("--eval-labels", dest="eval_labels")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=2048)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--warmup-ratio", dest="warmup_ratio", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--precision", choices=("fp32", "fp64"))
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("verify-invariance",
                       help="measure matched-representation distances under permutations")
    common(p)
    model_flags(p)
    p.add_argument("--tables", type=int, default=100)
    p.add_argument("--perms", type=int, default=20)
    p.add_argument("--precision", choices=("fp32", "fp64"), default="fp32")
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_verify_invariance)

    p = sub.add_parser("probe-excessive",
                       help="verify non-permutation shuffles move the table representation")
    common(p)
    model_flags(p)
    p.add_argument("--tables", type=int, default=100)
    p.add_argument("--shuffles", type=int, default=1)
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--min-fraction", dest="min_fraction", type=float, default=0.95)
    p.set_defaults(func=cmd_probe_excessive)

    p = sub.add_parser("wl-check", help="color-refinement oracle sanity run")
    common(p)
    p.add_argument("--tables", type=int, default=50)
    p.set_defaults(func=cmd_wl_check)

    p = sub.add_parser("profile", help="per-layer wall-time scaling profile")
    common(p)
    p.add_argument("--sizes", default="10x10,20x10,20x20,40x20")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_cfg = _load_config_file(args.config)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        # validate cheap usage-level preconditions before touching --out
        out_dir = Path(args.out)
        run = Run(out_dir, args.command, argv)
        _precheck(args)
        out_dir.mkdir(parents=True, exist_ok=True)
        code = args.func(args, file_cfg, run)
        run.finish()
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (CorpusError, MalformedTableError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, HytrelError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def _precheck(args) -> None:
    """Reject missing input files before the run directory exists."""
    for attr, what in (("corpus", "--corpus path"), ("checkpoint", "--checkpoint path"),
                       ("vocab", "--vocab path"), ("train_corpus", "--train-corpus path"),
                       ("train_labels", "--train-labels path"),
                       ("eval_corpus", "--eval-corpus path"),
                       ("eval_labels", "--eval-labels path")):
        value = getattr(args, attr, None)
        if value is not None and not Path(value).is_file():
            raise UsageError(f"{what} not found: {value}")


if __name__ == "__main__":
    sys.exit(main())
