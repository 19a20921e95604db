# run_config.py
"""
Run configuration: environment defaults, the dotted-key file reader and the
validated RunConfig model.

A run file fully determines a run except the seed:

    name = desk
    seeds = 0, 1, 2
    model.input_kind = fixed_code
    model.d_model = 64
    recoder.seed = 7
    data.corpus = corpora/desk.txt
    train.total_steps = 4000
    train.lr = 1e-3
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, ValidationInfo, field_validator, model_validator

from errors import InvalidConfig, IoFailure
from token_codes import INPUT_KINDS
from transformer_lm import ModelConfig, OptimConfig

load_dotenv()

# -----------------------------
# Config
# -----------------------------
OUT_DIR = os.getenv("TABLEFREE_OUT_DIR", "runs")
DB_PATH = os.getenv("TABLEFREE_DB_PATH")  # default: <out dir>/runs.db
LOG_LEVEL = os.getenv("TABLEFREE_LOG_LEVEL", "INFO").upper()
VERIFY_MAX_V = int(os.getenv("TABLEFREE_VERIFY_MAX_V", "65536"))

# --input-kind short names
KIND_ALIASES = {
    "learned": "learned",
    "fixed": "fixed_code",
    "fixed_code": "fixed_code",
    "affine": "affine_recoded",
    "affine_recoded": "affine_recoded",
}


def canonical_kind(name: str) -> str:
    try:
        return KIND_ALIASES[name]
    except KeyError:
        raise InvalidConfig(f"unknown input kind {name!r}; use learned, fixed or affine") from None


def parse_dotted(text: str) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    fields: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidConfig(f"line {lineno}: empty key")
        fields[key] = value
    return fields


# -----------------------------
# Models
# -----------------------------
class DataConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    corpus: Optional[str] = None
    val_corpus: Optional[str] = None  # when set, no split: all of corpus trains, this validates
    val_fraction: float = 0.1
    split_seed: int = 0
    batch_size: int = 8

    @model_validator(mode="after")
    def _check(self) -> "DataConfig":
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidConfig("data.val_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise InvalidConfig("data.batch_size must be positive")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_steps: int = 200
    eval_every: int = 50
    eval_batches: Optional[int] = None  # None evaluates the whole validation split
    optim: OptimConfig = OptimConfig()

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.total_steps < 1:
            raise InvalidConfig("train.total_steps must be positive")
        if self.eval_every < 1:
            raise InvalidConfig("train.eval_every must be positive")
        if self.eval_batches is not None and self.eval_batches < 1:
            raise InvalidConfig("train.eval_batches must be positive")
        return self

    def eval_steps(self) -> List[int]:
        """Steps (1-based, after the update) at which validation runs; always includes the last."""
        steps = list(range(self.eval_every, self.total_steps + 1, self.eval_every))
        if not steps or steps[-1] != self.total_steps:
            steps.append(self.total_steps)
        return steps


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "run"
    model: ModelConfig = ModelConfig()
    recoder_seed: Optional[int] = None
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    seeds: List[int] = [0, 1, 2]
    variants: List[str] = list(INPUT_KINDS)

    @field_validator("seeds", "variants", mode="before")
    @classmethod
    def _split_list(cls, value, info: ValidationInfo):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        if info.field_name == "variants":
            return [KIND_ALIASES.get(v, v) for v in value]
        return value

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if not self.seeds:
            raise InvalidConfig("seeds must name at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidConfig(f"seeds must be distinct, got {self.seeds}")
        unknown = [v for v in self.variants if v not in INPUT_KINDS]
        if unknown:
            raise InvalidConfig(f"unknown variants {unknown}")
        if self.model.input_kind == "affine_recoded" and self.recoder_seed is None:
            raise InvalidConfig("affine_recoded runs need recoder.seed")
        return self

    @property
    def input_kind(self) -> str:
        return self.model.input_kind


# -----------------------------
# Loading
# -----------------------------
def _section(fields: Mapping[str, str], prefix: str) -> Dict[str, str]:
    return {k[len(prefix):]: v for k, v in fields.items() if k.startswith(prefix)}


def run_config_from_mapping(fields: Mapping[str, str]) -> RunConfig:
    known_prefixes = ("model.", "data.", "train.", "recoder.")
    top_level = {"name", "seeds", "variants"}
    stray = [k for k in fields if k not in top_level and not k.startswith(known_prefixes)]
    if stray:
        raise InvalidConfig(f"unknown config keys: {', '.join(sorted(stray))}")

    train = _section(fields, "train.")
    optim_keys = set(OptimConfig.model_fields)
    recoder = _section(fields, "recoder.")
    if set(recoder) - {"seed"}:
        raise InvalidConfig("only recoder.seed is accepted in run configs")
    raw = {
        "model": {k: (canonical_kind(v) if k == "input_kind" else v) for k, v in _section(fields, "model.").items()},
        "data": _section(fields, "data."),
        "train": {
            **{k: v for k, v in train.items() if k not in optim_keys},
            "optim": {k: v for k, v in train.items() if k in optim_keys},
        },
        **{k: fields[k] for k in top_level if k in fields},
    }
    if "seed" in recoder:
        raw["recoder_seed"] = recoder["seed"]
    try:
        return RunConfig(**raw)
    except ValidationError as e:
        raise InvalidConfig(_first_error(e)) from e


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err.get("loc", ()))
    return f"{where}: {err.get('msg')}" if where else str(err.get("msg"))


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Reads a run file (or starts from defaults) and applies dotted-key overrides from flags."""
    fields: Dict[str, str] = {}
    if path is not None:
        try:
            fields.update(parse_dotted(Path(path).read_text()))
        except OSError as e:
            raise IoFailure(f"cannot read config {path}: {e}") from e
        # corpus paths in a file are relative to that file
        for key in ("data.corpus", "data.val_corpus"):
            if key in fields and not Path(fields[key]).is_absolute():
                fields[key] = str(Path(path).parent / fields[key])
    fields.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return run_config_from_mapping(fields)


def run_dir(config: RunConfig, seed: int, out_dir: Union[str, Path, None] = None) -> Path:
    return Path(out_dir or OUT_DIR) / config.name / config.input_kind / f"seed-{seed}"


def registry_path(out_dir: Union[str, Path, None] = None) -> Path:
    return Path(DB_PATH) if DB_PATH else Path(out_dir or OUT_DIR) / "runs.db"
