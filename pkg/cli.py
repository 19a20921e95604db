# cli.py
"""
Experiment runner.

    python cli.py codegen      --vocab-size 256 --d-model 64 [--recoder-seed 7] [--table] --out specs/
    python cli.py verify       --spec specs/code_spec.conf [--table specs/frozen_table.bin]
    python cli.py train        --config configs/desk_scale.conf --seed 0 --input-kind fixed
    python cli.py eval         --config configs/desk_scale.conf --seed 0 --input-kind fixed
    python cli.py compare      --config configs/desk_scale.conf
    python cli.py export-table --spec specs/code_spec.conf --out specs/
    python cli.py sample       --config configs/desk_scale.conf --seed 0 --prompt "The "
    python cli.py census       --config configs/full_scale.conf

Exit codes: 0 ok, 1 verification failed, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

import storage
from checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from checks.balance_checks import BalanceCheck, HypercubeCheck
from checks.base import FAIL, CheckContext, CheckResult
from checks.injectivity_checks import InjectivityCheck
from checks.rank_checks import RankCheck
from checks.table_checks import FrozenTableCheck
from data_pipeline import Document, batch_stream, detokenize, load_corpus, split_documents
from errors import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    InsufficientData,
    InvalidArgs,
    InvalidConfig,
    MissingRuns,
    TableFreeError,
    VerificationFailed,
)
from metrics import METRICS_FILE, PROM_FILE, VARIANT_LABELS, MetricsLog, RunReport, SeedResult, TrainingTelemetry, build_report, final_eval, read_metrics
from run_config import LOG_LEVEL, OUT_DIR, VERIFY_MAX_V, RunConfig, canonical_kind, load_run_config, registry_path, run_dir
from token_codes import (
    INPUT_KINDS,
    CodeSpec,
    export_frozen_table,
    read_code_spec,
    read_frozen_table,
    trainable_input_params,
    write_code_spec,
    write_frozen_table,
)
from transformer_lm import (
    ModelConfig,
    build_interface,
    check_input_rank,
    evaluate,
    init_model,
    init_train_state,
    parameter_census,
    sample_text,
    train_step,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.bin"
CODE_SPEC_FILE = "code_spec.conf"
FROZEN_TABLE_FILE = "frozen_table.bin"

# -----------------------------
# Verification dispatcher
# -----------------------------
VERIFICATION_CHECKS = [
    InjectivityCheck(),
    BalanceCheck(),
    HypercubeCheck(),
    RankCheck(),
    FrozenTableCheck(),
]


def run_checks(ctx: CheckContext) -> List[CheckResult]:
    return [check.run(ctx) for check in VERIFICATION_CHECKS]


# -----------------------------
# Helpers
# -----------------------------
def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Optional[str]] = {}
    if getattr(args, "input_kind", None):
        overrides["model.input_kind"] = canonical_kind(args.input_kind)
    if getattr(args, "recoder_seed", None) is not None:
        overrides["recoder.seed"] = str(args.recoder_seed)
    if getattr(args, "corpus", None):
        overrides["data.corpus"] = args.corpus
    if getattr(args, "steps", None) is not None:
        overrides["train.total_steps"] = str(args.steps)
    return load_run_config(args.config, overrides)


def _out_dir(args: argparse.Namespace) -> Path:
    return Path(args.out or OUT_DIR)


def _spec_from_args(args: argparse.Namespace) -> CodeSpec:
    if getattr(args, "spec", None):
        return read_code_spec(args.spec)
    kind = canonical_kind(args.input_kind) if args.input_kind else ("affine_recoded" if args.recoder_seed is not None else "fixed_code")
    if kind == "learned":
        raise InvalidArgs("a learned table has no code spec; use --input-kind fixed or affine")
    if kind == "affine_recoded" and args.recoder_seed is None:
        raise InvalidArgs("--input-kind affine needs --recoder-seed")
    seed = args.recoder_seed if kind == "affine_recoded" else None
    if args.vocab_size < 1 or args.d_model < 1:
        raise InvalidArgs("--vocab-size and --d-model must be positive")
    return CodeSpec.build(args.vocab_size, args.d_model, recoder_seed=seed)


def split_corpus(config: RunConfig) -> Tuple[List[Document], List[Document]]:
    """(train, val) documents for a run; the split is shared by every seed and variant."""
    if not config.data.corpus:
        raise InvalidArgs("no corpus: set data.corpus or pass --corpus")
    corpus = load_corpus(config.data.corpus)
    if config.data.val_corpus:
        return corpus, load_corpus(config.data.val_corpus)
    split = split_documents(corpus, config.data.val_fraction, config.data.split_seed)
    train_docs, val_docs = split.documents(corpus, "train"), split.documents(corpus, "val")
    if not train_docs or not val_docs:
        raise InsufficientData(
            f"split of {len(corpus)} document(s) left {len(train_docs)} train / {len(val_docs)} val; "
            "add documents or set data.val_corpus"
        )
    return train_docs, val_docs


def _val_stream(config: RunConfig, val_docs: Sequence[Document]):
    stream = batch_stream(val_docs, config.model.context_len, config.data.batch_size, seed=None, epochs=1)
    if config.train.eval_batches is not None:
        stream = itertools.islice(stream, config.train.eval_batches)
    return stream


def _load_run_checkpoint(args: argparse.Namespace, config: RunConfig) -> Checkpoint:
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else run_dir(config, args.seed, _out_dir(args)) / CHECKPOINT_FILE
    if not path.exists():
        raise MissingRuns(f"no checkpoint at {path}; train it first")
    return load_checkpoint(path)


# -----------------------------
# Commands
# -----------------------------
def cmd_codegen(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    spec_path = out / CODE_SPEC_FILE
    write_code_spec(spec, spec_path)
    delta = trainable_input_params("learned", spec.vocab_size, spec.lift_width)
    print(f"✅ Code spec written: {spec_path}")
    print(f"   V={spec.vocab_size}  K={spec.code_width}  d={spec.lift_width}  tiles={spec.tiles}")
    if spec.recoder is not None:
        print(f"   recoder: seed={spec.recoder.seed} shift={spec.recoder.shift.to_string()}")
    print(f"   trainable input params: learned={delta}  code=0  delta={delta}")
    if args.table:
        table_path = out / FROZEN_TABLE_FILE
        write_frozen_table(export_frozen_table(spec), table_path)
        print(f"✅ Frozen table written: {table_path}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    spec = read_code_spec(args.spec)
    table = read_frozen_table(args.table) if args.table else None
    print(f"🔍 Verifying V={spec.vocab_size} K={spec.code_width} d={spec.lift_width}"
          f" ({'affine recoded' if spec.recoder else 'canonical'})")
    results = run_checks(CheckContext(spec=spec, table=table, max_vocab=VERIFY_MAX_V))
    for r in results:
        print("   " + r.line())
    failed = [r.name for r in results if r.status == FAIL]
    if failed:
        raise VerificationFailed(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    print("✅ All applicable checks passed.")
    return EXIT_OK


def run_training(config: RunConfig, seed: int, out_dir: Path, db_path: Optional[Path] = None) -> Dict:
    """Trains one (variant, seed) run to total_steps; returns the registry record."""
    train_docs, val_docs = split_corpus(config)
    interface = build_interface(config.model, recoder_seed=config.recoder_seed)
    rank = check_input_rank(interface)
    params = init_model(config.model, seed)
    state = init_train_state(params, config.train.optim, config.train.total_steps, seed)
    stream = batch_stream(train_docs, config.model.context_len, config.data.batch_size, seed=seed, epochs=None)
    eval_steps = set(config.train.eval_steps())

    rdir = run_dir(config, seed, out_dir)
    rdir.mkdir(parents=True, exist_ok=True)
    telemetry = TrainingTelemetry(config.input_kind, seed)
    print(f"🚀 Training {config.name}/{config.input_kind} seed={seed}: "
          f"{parameter_census(config.model):,} params, {config.train.total_steps} steps, "
          f"warmup {state.warmup_steps}" + (f", input rank {rank}" if rank is not None else ""))

    result = None
    log_every = max(1, config.train.total_steps // 20)
    with MetricsLog(rdir / METRICS_FILE) as log:
        for _ in range(config.train.total_steps):
            batch = next(stream)
            started = time.perf_counter()
            state, m = train_step(state, interface, batch)
            telemetry.observe_step(int(batch["tokens"].size), m, time.perf_counter() - started)
            log.log_step(state.step, state.tokens_seen, m["loss"], m["lr"], m["grad_norm"])
            if state.step % log_every == 0:
                logger.info("step %d loss %.4f lr %.2e grad_norm %.3f", state.step, m["loss"], m["lr"], m["grad_norm"])
            if state.step in eval_steps:
                result = evaluate(state.params, interface, _val_stream(config, val_docs))
                log.log_eval(state.step, state.tokens_seen, result.val_loss, result.val_ppl)
                telemetry.observe_eval(result.val_loss, result.val_ppl)
                telemetry.write(rdir / PROM_FILE)
                print(f"   step {state.step:>6}  train loss {m['loss']:.4f}  val loss {result.val_loss:.4f}  val ppl {result.val_ppl:.4f}")

    ckpt_path = rdir / CHECKPOINT_FILE
    save_checkpoint(ckpt_path, state.params, interface, seed, state.step, state.tokens_seen)
    telemetry.write(rdir / PROM_FILE)
    record = {
        "kind": "train",
        "experiment": config.name,
        "input_kind": config.input_kind,
        "seed": seed,
        "run_dir": str(rdir),
        "checkpoint_path": str(ckpt_path),
        "metrics_path": str(rdir / METRICS_FILE),
        "total_steps": state.step,
        "tokens_seen": state.tokens_seen,
        "val_loss": result.val_loss,
        "val_ppl": result.val_ppl,
        "final_train_loss": m["loss"],
    }
    storage.init_db(db_path)
    storage.store_run(record, db_path)
    return record


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out = _out_dir(args)
    record = run_training(config, args.seed, out, registry_path(out))
    print(f"✅ Done: val loss {record['val_loss']:.4f}, val ppl {record['val_ppl']:.4f}, "
          f"{record['tokens_seen']:,} tokens. Checkpoint: {record['checkpoint_path']}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    ckpt = _load_run_checkpoint(args, config)
    _, val_docs = split_corpus(config)
    interface = ckpt.interface()
    result = evaluate(ckpt.params, interface, _val_stream(config, val_docs))
    out = _out_dir(args)
    db_path = registry_path(out)
    storage.init_db(db_path)
    storage.store_run(
        {
            "kind": "eval",
            "experiment": config.name,
            "input_kind": ckpt.input_kind,
            "seed": ckpt.seed,
            "run_dir": str(run_dir(config, ckpt.seed, out)),
            "total_steps": ckpt.step,
            "tokens_seen": ckpt.tokens_seen,
            "val_loss": result.val_loss,
            "val_ppl": result.val_ppl,
            "tokens_evaluated": result.tokens_evaluated,
        },
        db_path,
    )
    print(f"✅ {ckpt.input_kind} seed={ckpt.seed} step={ckpt.step}: val loss {result.val_loss:.4f}, "
          f"val ppl {result.val_ppl:.4f} over {result.tokens_evaluated:,} tokens")
    return EXIT_OK


def compare_runs(config: RunConfig, db_path: Path) -> RunReport:
    storage.init_db(db_path)
    latest = storage.latest_train_runs(config.name, db_path)
    missing = [f"{kind}/seed-{s}" for kind in config.variants for s in config.seeds if (kind, s) not in latest]
    if missing:
        known = ", ".join(e["experiment"] for e in storage.get_experiments(db_path)) or "none"
        raise MissingRuns(f"missing runs for {config.name}: {', '.join(missing)} (registered experiments: {known})")

    per_variant: Dict[str, List[SeedResult]] = {}
    for kind in config.variants:
        for s in config.seeds:
            run = latest[(kind, s)]
            last = final_eval(read_metrics(run["metrics_path"]))
            if last is None:
                raise MissingRuns(f"{kind}/seed-{s}: metrics log has no evaluation record")
            per_variant.setdefault(kind, []).append(
                SeedResult(seed=s, val_loss=last["val_loss"], val_ppl=last["val_ppl"], tokens_seen=last["tokens_seen"])
            )
    return build_report(config.name, per_variant)


def cmd_compare(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    report = compare_runs(config, registry_path(_out_dir(args)))
    print(report.render())
    for w in report.warnings:
        print(f"⚠️ {w}")
    return EXIT_OK


def cmd_census(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    base = config.model.model_dump()
    print(f"📊 Parameter census: V={config.model.vocab_size} d={config.model.d_model} "
          f"layers={config.model.n_layers} heads={config.model.n_heads}")
    print(f"   {'variant':<16} {'total':>16} {'input side':>14}")
    counts: Dict[str, int] = {}
    for kind in INPUT_KINDS:
        try:
            model = ModelConfig(**{**base, "input_kind": kind})
        except InvalidConfig as e:
            print(f"   ⚠️ {VARIANT_LABELS[kind]}: {e}")
            continue
        counts[kind] = parameter_census(model)
        input_side = trainable_input_params(kind, model.vocab_size, model.d_model)
        print(f"   {VARIANT_LABELS[kind]:<16} {counts[kind]:>16,} {input_side:>14,}")
    if "learned" in counts and "fixed_code" in counts:
        print(f"   learned - code = {counts['learned'] - counts['fixed_code']:,}")
    return EXIT_OK


def cmd_export_table(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / FROZEN_TABLE_FILE
    write_frozen_table(export_frozen_table(spec), path)
    print(f"✅ Frozen table written: {path} ({spec.vocab_size} x {spec.lift_width} float32, not trainable)")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    ckpt = _load_run_checkpoint(args, config)
    prompt = list(args.prompt.encode("utf-8"))
    ids = sample_text(ckpt.params, ckpt.interface(), prompt, args.tokens, args.temperature, args.sample_seed)
    print(detokenize(ids).decode("utf-8", errors="replace"))
    return EXIT_OK


# -----------------------------
# Argument parsing
# -----------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablefree",
        description="Table-free token codes and the matched input-interface comparison.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", help="run config file (dotted keys)")
    run.add_argument("--corpus", help="corpus file or directory, overrides data.corpus")
    run.add_argument("--out", help=f"output directory (default {OUT_DIR})")
    run.add_argument("--input-kind", choices=["learned", "fixed", "affine"], help="overrides model.input_kind")
    run.add_argument("--recoder-seed", type=int, help="overrides recoder.seed")

    code = argparse.ArgumentParser(add_help=False)
    code.add_argument("--spec", help="code spec file; otherwise built from the flags below")
    code.add_argument("--vocab-size", type=int, default=256)
    code.add_argument("--d-model", type=int, default=64)
    code.add_argument("--input-kind", choices=["learned", "fixed", "affine"])
    code.add_argument("--recoder-seed", type=int)
    code.add_argument("--out", help="output directory")

    p = sub.add_parser("codegen", parents=[code], help="write a code spec (and optionally its frozen table)")
    p.add_argument("--table", action="store_true", help="also write the frozen lookup table")
    p.set_defaults(func=cmd_codegen)

    p = sub.add_parser("verify", help="check a code spec against its guarantees")
    p.add_argument("--spec", required=True)
    p.add_argument("--table", help="frozen table file to compare bit for bit")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", parents=[run], help="train one variant with one seed")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, help="overrides train.total_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[run], help="evaluate a checkpoint on the validation split")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--checkpoint", help="checkpoint path (default: the run directory's)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[run], help="multi-seed comparison report")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("census", parents=[run], help="trainable parameter counts per input variant")
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("export-table", parents=[code], help="write the frozen lookup table for a code spec")
    p.set_defaults(func=cmd_export_table)

    p = sub.add_parser("sample", parents=[run], help="generate text from a checkpoint")
    p.add_argument("--seed", type=int, required=True, help="training seed of the run to load")
    p.add_argument("--checkpoint")
    p.add_argument("--prompt", default="The ")
    p.add_argument("--tokens", type=int, default=200)
    p.add_argument("--temperature", type=float, default=0.8)
    p.add_argument("--sample-seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG_ERROR if e.code else EXIT_OK
    try:
        return args.func(args)
    except TableFreeError as e:
        print(f"❌ {e}")
        return e.exit_code
    except ValidationError as e:
        print(f"❌ invalid configuration: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
