# checkpoint.py
"""
Checkpoint file format.

    tablefree-checkpoint 1\n
    header_bytes=<n>\n
    <n bytes of dotted-key text: model config, input kind, code spec, seed, step>
    array <name> <ndim> <dim_0> ... <dim_ndim-1>\n
    <little-endian float32 payload>
    ...

Arrays are written in sorted name order and no timestamps are stored, so the
same parameters always produce the same bytes.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from errors import InvalidConfig, IoFailure, NonFiniteValue
from run_config import parse_dotted
from gf2_linear import BitMatrix, BitVector
from token_codes import CodeSpec, Recoder
from transformer_lm import FixedCode, InputInterface, ModelConfig, Parameters, build_interface, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"tablefree-checkpoint 1\n"


@dataclass
class Checkpoint:
    params: Parameters
    code_spec: Optional[CodeSpec]
    seed: int
    step: int
    tokens_seen: int

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    @property
    def input_kind(self) -> str:
        return self.params.config.input_kind

    def interface(self) -> InputInterface:
        return build_interface(self.config, spec=self.code_spec)


def _header(params: Parameters, spec: Optional[CodeSpec], seed: int, step: int, tokens_seen: int) -> str:
    lines = [f"model.{k} = {v}" for k, v in params.config.model_dump().items()]
    lines.append(f"input_kind = {params.config.input_kind}")
    if spec is not None:
        lines += [
            f"code.vocab_size = {spec.vocab_size}",
            f"code.code_width = {spec.code_width}",
            f"code.lift_width = {spec.lift_width}",
        ]
        if spec.recoder is not None:
            lines.append(f"code.recoder.matrix = {','.join(spec.recoder.matrix.to_strings())}")
            lines.append(f"code.recoder.shift = {spec.recoder.shift.to_string()}")
            if spec.recoder.seed is not None:
                lines.append(f"code.recoder.seed = {spec.recoder.seed}")
    lines += [f"seed = {seed}", f"step = {step}", f"tokens_seen = {tokens_seen}"]
    return "\n".join(lines) + "\n"


def save_checkpoint(
    path: Union[str, Path],
    params: Parameters,
    interface: InputInterface,
    seed: int,
    step: int,
    tokens_seen: int = 0,
) -> None:
    for name, arr in params.arrays.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"parameter {name} contains NaN or Inf")
    spec = interface.spec if isinstance(interface, FixedCode) else None
    header = _header(params, spec, seed, step, tokens_seen).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(f"header_bytes={len(header)}\n".encode("ascii"))
            fh.write(header)
            for name in sorted(params.arrays):
                arr = params.arrays[name]
                dims = " ".join(str(n) for n in arr.shape)
                fh.write(f"array {name} {arr.ndim} {dims}\n".encode("ascii"))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except OSError as e:
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e
    logger.info("checkpoint written: %s (step %d)", path, step)


def _code_spec(fields: Dict[str, str]) -> Optional[CodeSpec]:
    if "code.vocab_size" not in fields:
        return None
    recoder = None
    if "code.recoder.matrix" in fields:
        matrix = BitMatrix.from_strings(fields["code.recoder.matrix"].split(","))
        recoder = Recoder(
            matrix=matrix,
            shift=BitVector.from_string(fields["code.recoder.shift"]),
            seed=int(fields["code.recoder.seed"]) if "code.recoder.seed" in fields else None,
        )
    return CodeSpec(
        vocab_size=int(fields["code.vocab_size"]),
        code_width=int(fields["code.code_width"]),
        lift_width=int(fields["code.lift_width"]),
        recoder=recoder,
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            if fh.readline() != MAGIC:
                raise IoFailure(f"{path} is not a checkpoint")
            size_line = fh.readline().decode("ascii").strip()
            if not size_line.startswith("header_bytes="):
                raise IoFailure(f"{path}: missing header_bytes")
            fields = parse_dotted(fh.read(int(size_line.split("=", 1)[1])).decode("utf-8"))
            arrays: Dict[str, np.ndarray] = {}
            while True:
                line = fh.readline()
                if not line:
                    break
                parts = line.decode("ascii").split()
                if len(parts) < 3 or parts[0] != "array":
                    raise IoFailure(f"{path}: malformed array record {line!r}")
                name, ndim = parts[1], int(parts[2])
                shape = tuple(int(n) for n in parts[3 : 3 + ndim])
                count = int(np.prod(shape, dtype=np.int64))
                payload = fh.read(4 * count)
                if len(payload) != 4 * count:
                    raise IoFailure(f"{path}: truncated array {name}")
                arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    except IoFailure:
        raise
    except OSError as e:
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e
    except (ValueError, UnicodeDecodeError) as e:
        raise IoFailure(f"corrupt checkpoint {path}: {e}") from e

    model = {k[len("model."):]: v for k, v in fields.items() if k.startswith("model.")}
    config = ModelConfig(**model)
    if fields.get("input_kind", config.input_kind) != config.input_kind:
        raise InvalidConfig(f"{path}: input_kind disagrees with model config")
    expected = parameter_shapes(config)
    found = {k: a.shape for k, a in arrays.items()}
    if found != expected:
        missing = sorted(set(expected) ^ set(found)) or sorted(k for k in expected if expected[k] != found[k])
        raise IoFailure(f"{path}: parameter arrays do not match the model config ({missing[0]})")
    return Checkpoint(
        params=Parameters(config, arrays),
        code_spec=_code_spec(fields),
        seed=int(fields.get("seed", 0)),
        step=int(fields.get("step", 0)),
        tokens_seen=int(fields.get("tokens_seen", 0)),
    )
