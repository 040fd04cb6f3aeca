"""
Tucker-L2E Storage - Tensor files and fit artifacts on disk.

TensorFile (plain text):

    3                 <- order N
    10 10 10          <- N dims
    0.5               <- prod(dims) values, first index fastest
    nan               <- missing entry (case-insensitive)
    ...

A decompose run with `--out run1` leaves:

    run1.Lhat    TensorFile of the fitted low-rank tensor
    run1.model   JSON: dims, ranks, core, factors, eta, tau, scale_s
    run1.meta    JSON: fit summary, input hash, seed, config
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .errors import TensorFileError
from .l2e import L2EModel, MaskedTensor
from .simulation import GroundTruth
from .tensors import DenseTensor

MISSING_TOKEN = "nan"


# === TensorFile ===


def _parse_int(token: str, path: Path, line: int, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise TensorFileError(path, line, f"{what} must be an integer, got {token!r}") from None
    if value < 1:
        raise TensorFileError(path, line, f"{what} must be positive, got {value}")
    return value


def read_tensor(path: str | Path) -> MaskedTensor:
    """
    Parse a TensorFile.

    Raises:
        TensorFileError: with the 1-based line of the first problem
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TensorFileError(path, 0, f"cannot read file: {exc.strerror or exc}") from exc

    # Blank lines are tolerated only at the end.
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise TensorFileError(path, 1, "empty file")

    tokens = lines[0].split()
    if len(tokens) != 1:
        raise TensorFileError(path, 1, "first line must hold the tensor order")
    order = _parse_int(tokens[0], path, 1, "order")

    if len(lines) < 2:
        raise TensorFileError(path, 2, "missing dims line")
    tokens = lines[1].split()
    if len(tokens) != order:
        raise TensorFileError(path, 2, f"expected {order} dims, found {len(tokens)}")
    dims = tuple(_parse_int(tok, path, 2, "dim") for tok in tokens)

    total = math.prod(dims)
    body = lines[2:]
    if len(body) < total:
        raise TensorFileError(path, len(lines) + 1, f"expected {total} values, found {len(body)}")
    if len(body) > total:
        raise TensorFileError(path, 3 + total, f"expected {total} values, found {len(body)}")

    values = np.empty(total)
    mask = np.ones(total)
    for offset, raw in enumerate(body):
        line_no = offset + 3
        token = raw.strip()
        if token.lower() == MISSING_TOKEN:
            values[offset] = np.nan
            mask[offset] = 0.0
            continue
        try:
            value = float(token)
        except ValueError:
            raise TensorFileError(path, line_no, f"not a number: {token!r}") from None
        if not math.isfinite(value):
            raise TensorFileError(path, line_no, f"value must be finite, got {token!r}")
        values[offset] = value

    if not mask.any():
        raise TensorFileError(path, 3, "every value is missing")
    return MaskedTensor(values=DenseTensor(dims, values), mask=DenseTensor(dims, mask))


def write_tensor(path: str | Path, tensor: MaskedTensor | DenseTensor) -> Path:
    """Write with shortest round-trip decimals; unobserved entries become `nan`."""
    path = Path(path)
    if isinstance(tensor, MaskedTensor):
        dims, data, observed = tensor.dims, tensor.values.data, tensor.observed
    else:
        dims, data, observed = tensor.dims, tensor.data, np.ones(tensor.size, dtype=bool)

    out = [str(len(dims)), " ".join(str(d) for d in dims)]
    out.extend(repr(float(v)) if seen else MISSING_TOKEN for v, seen in zip(data, observed))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


# === JSON documents ===


def _write_json(path: Path, payload: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


class FitArtifacts:
    """The `.Lhat`, `.model` and `.meta` files of one decompose run."""

    def __init__(self, prefix: str | Path):
        self.prefix = Path(prefix)
        self.lhat_file = self._with_suffix(".Lhat")
        self.model_file = self._with_suffix(".model")
        self.meta_file = self._with_suffix(".meta")

    def _with_suffix(self, suffix: str) -> Path:
        return self.prefix.with_name(self.prefix.name + suffix)

    def save(self, model: L2EModel, L_hat: DenseTensor, meta: dict[str, Any]) -> list[Path]:
        return [
            write_tensor(self.lhat_file, L_hat),
            _write_json(self.model_file, model.to_dict()),
            _write_json(self.meta_file, meta),
        ]

    def load_model(self) -> L2EModel:
        return L2EModel.from_dict(json.loads(self.model_file.read_text()))

    def load_meta(self) -> dict[str, Any]:
        return json.loads(self.meta_file.read_text())

    def load_estimate(self) -> DenseTensor:
        return read_tensor(self.lhat_file).values

    def exists(self) -> bool:
        return all(p.exists() for p in (self.lhat_file, self.model_file, self.meta_file))


def write_ground_truth(prefix: str | Path, truth: GroundTruth) -> tuple[Path, Path]:
    """`<prefix>.L` holds the clean tensor, `<prefix>.truth.json` the corruption record."""
    prefix = Path(prefix)
    clean = write_tensor(prefix.with_name(prefix.name + ".L"), truth.low_rank)
    record = _write_json(prefix.with_name(prefix.name + ".truth.json"), truth.to_dict())
    return clean, record


def read_ground_truth(prefix: str | Path) -> tuple[DenseTensor, dict[str, Any]]:
    prefix = Path(prefix)
    clean = read_tensor(prefix.with_name(prefix.name + ".L")).values
    record = json.loads(prefix.with_name(prefix.name + ".truth.json").read_text())
    return clean, record
