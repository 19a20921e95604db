# metrics.py
"""
Per-run telemetry and the multi-seed comparison report.

  - MetricsLog        append-only JSON lines, one record per train step and per evaluation
  - TrainingTelemetry prometheus gauges/counters on a per-run registry, dumped to metrics.prom
  - RunReport         cross-seed mean and relative seed range, rendered as a plain-text table
"""
from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from errors import IoFailure, MissingRuns

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
PROM_FILE = "metrics.prom"

# Full-scale results, shown for context only; not reproducible at desk scale.
REFERENCE_PPL = {"learned": 2.44, "fixed_code": 2.36, "affine_recoded": 2.39}

VARIANT_LABELS = {
    "learned": "learned table",
    "fixed_code": "fixed code",
    "affine_recoded": "affine recoded",
}


# -----------------------------
# Metrics log
# -----------------------------
class MetricsLog:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"cannot open metrics log {self.path}: {e}") from e

    def _write(self, record: Dict) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def log_step(self, step: int, tokens_seen: int, loss: float, lr: float, grad_norm: float) -> None:
        self._write({
            "kind": "train",
            "step": step,
            "tokens_seen": tokens_seen,
            "loss": loss,
            "lr": lr,
            "grad_norm": grad_norm,
        })

    def log_eval(self, step: int, tokens_seen: int, val_loss: float, val_ppl: float) -> None:
        self._write({
            "kind": "eval",
            "step": step,
            "tokens_seen": tokens_seen,
            "val_loss": val_loss,
            "val_ppl": val_ppl,
        })

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: Union[str, Path]) -> List[Dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as e:
        raise IoFailure(f"cannot read metrics log {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise IoFailure(f"corrupt metrics log {path}: {e}") from e


def final_eval(records: Sequence[Dict]) -> Optional[Dict]:
    evals = [r for r in records if r.get("kind") == "eval"]
    return evals[-1] if evals else None


# -----------------------------
# Prometheus telemetry
# -----------------------------
class TrainingTelemetry:
    """One registry per run, so concurrent runs never share series."""

    def __init__(self, input_kind: str, seed: int):
        self.registry = CollectorRegistry()
        labels = {"input_kind": input_kind, "seed": str(seed)}
        names = list(labels)

        self.steps_total = Counter("train_steps_total", "Optimizer steps taken", names, registry=self.registry).labels(**labels)
        self.tokens_total = Counter("train_tokens_total", "Training tokens consumed", names, registry=self.registry).labels(**labels)
        self.loss = Gauge("train_loss", "Last training loss", names, registry=self.registry).labels(**labels)
        self.lr = Gauge("train_learning_rate", "Last learning rate", names, registry=self.registry).labels(**labels)
        self.grad_norm = Gauge("train_grad_norm", "Last pre-clip global gradient norm", names, registry=self.registry).labels(**labels)
        self.val_loss = Gauge("val_loss", "Last validation loss", names, registry=self.registry).labels(**labels)
        self.val_ppl = Gauge("val_perplexity", "Last validation perplexity", names, registry=self.registry).labels(**labels)
        self.step_seconds = Histogram(
            "train_step_duration_seconds", "Wall time per optimizer step", names, registry=self.registry
        ).labels(**labels)

    def observe_step(self, tokens: int, metrics: Dict[str, float], seconds: float) -> None:
        self.steps_total.inc()
        self.tokens_total.inc(tokens)
        self.loss.set(metrics["loss"])
        self.lr.set(metrics["lr"])
        self.grad_norm.set(metrics["grad_norm"])
        self.step_seconds.observe(seconds)

    def observe_eval(self, val_loss: float, val_ppl: float) -> None:
        self.val_loss.set(val_loss)
        self.val_ppl.set(val_ppl)

    def write(self, path: Union[str, Path]) -> None:
        try:
            write_to_textfile(str(path), self.registry)
        except OSError as e:
            logger.warning("could not write %s: %s", path, e)


# -----------------------------
# Comparison report
# -----------------------------
def relative_seed_range(values: Sequence[float]) -> float:
    """(max - min) / mean; 0 for a single seed."""
    if not values:
        raise ValueError("need at least one value")
    mean = statistics.fmean(values)
    return (max(values) - min(values)) / mean


@dataclass(frozen=True)
class SeedResult:
    seed: int
    val_loss: float
    val_ppl: float
    tokens_seen: int


@dataclass
class VariantSummary:
    input_kind: str
    seeds: List[SeedResult]
    mean_val_loss: float = field(init=False)
    mean_val_ppl: float = field(init=False)
    rel_seed_range: float = field(init=False)
    tokens_per_seed: int = field(init=False)

    def __post_init__(self):
        if not self.seeds:
            raise MissingRuns(f"no runs for {self.input_kind}")
        ppl = [s.val_ppl for s in self.seeds]
        self.mean_val_loss = statistics.fmean(s.val_loss for s in self.seeds)
        self.mean_val_ppl = statistics.fmean(ppl)
        self.rel_seed_range = relative_seed_range(ppl)
        self.tokens_per_seed = max(s.tokens_seen for s in self.seeds)


@dataclass
class RunReport:
    experiment: str
    variants: List[VariantSummary]
    warnings: List[str] = field(default_factory=list)

    def variant(self, input_kind: str) -> Optional[VariantSummary]:
        return next((v for v in self.variants if v.input_kind == input_kind), None)

    def relative_change(self, input_kind: str, baseline: str = "learned") -> Optional[float]:
        """Mean val_ppl relative to the baseline variant, e.g. -0.03 for 3% lower."""
        base, other = self.variant(baseline), self.variant(input_kind)
        if base is None or other is None:
            return None
        return (other.mean_val_ppl - base.mean_val_ppl) / base.mean_val_ppl

    def render(self) -> str:
        header = f"{'variant':<16} {'tokens/seed':>12} {'val loss':>9} {'val ppl mean':>13} {'rel. seed range':>16} {'vs learned':>11}"
        lines = [f"Experiment: {self.experiment}", header, "-" * len(header)]
        for v in self.variants:
            change = self.relative_change(v.input_kind)
            change_txt = "-" if change is None or v.input_kind == "learned" else f"{change * 100:+.2f}%"
            lines.append(
                f"{VARIANT_LABELS.get(v.input_kind, v.input_kind):<16} {v.tokens_per_seed:>12,} "
                f"{v.mean_val_loss:>9.4f} {v.mean_val_ppl:>13.4f} {v.rel_seed_range * 100:>15.2f}% {change_txt:>11}"
            )
        lines.append("-" * len(header))
        reference = "  ".join(f"{VARIANT_LABELS[k]} {p:.2f}" for k, p in REFERENCE_PPL.items())
        lines.append(f"full-scale reference val ppl (not computed here): {reference}")
        return "\n".join(lines)


def build_report(experiment: str, per_variant: Dict[str, Iterable[SeedResult]]) -> RunReport:
    warnings: List[str] = []
    summaries = []
    for kind, seeds in per_variant.items():
        summary = VariantSummary(kind, sorted(seeds, key=lambda s: s.seed))
        if len(summary.seeds) == 1:
            warnings.append(f"{kind}: single seed, relative seed range reported as 0")
        summaries.append(summary)
    return RunReport(experiment=experiment, variants=summaries, warnings=warnings)
