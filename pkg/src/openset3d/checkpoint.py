"""Text checkpoint format for model parameters.

Layout (stable across versions):

    openset3d checkpoint v1
    {json hyperparameter header}
    param <name> <dim0> <dim1> ...
    <row of repr'd float64 values per leading index>

Values are written with Python float repr (shortest round-trip), so a
save/load cycle is bit-exact and identical training runs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoder import Model

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = "openset3d checkpoint v1"


def _format_rows(arr: np.ndarray):
    mat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
    for row in mat:
        yield " ".join(repr(float(v)) for v in row)


def save_checkpoint(path, model: Model) -> None:
    lines = [MAGIC, json.dumps(model.hyperparams(), sort_keys=True)]
    for name in sorted(model.params):
        arr = model.params[name]
        lines.append("param " + name + " " + " ".join(str(d) for d in arr.shape))
        lines.extend(_format_rows(arr))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_checkpoint(path) -> Model:
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or text[0] != MAGIC:
        raise ValueError(f"{path}: not an openset3d checkpoint")
    header = json.loads(text[1])
    model = Model(
        num_known=header["num_known"],
        feat_dim=header["feat_dim"],
        point_widths=tuple(header["point_widths"]),
        proj_hidden=tuple(header["proj_hidden"]),
    )
    expected = set(model.params)
    i = 2
    seen = set()
    while i < len(text):
        line = text[i]
        if not line.strip():
            i += 1
            continue
        fields = line.split()
        if fields[0] != "param":
            raise ValueError(f"{path}:{i + 1}: expected a param header, got {line!r}")
        name = fields[1]
        shape = tuple(int(v) for v in fields[2:])
        if name not in expected:
            raise ValueError(f"{path}:{i + 1}: unknown parameter {name!r}")
        if shape != model.params[name].shape:
            raise ValueError(
                f"{path}:{i + 1}: shape {shape} does not match header-derived "
                f"{model.params[name].shape} for {name!r}"
            )
        rows = shape[0] if len(shape) > 1 else 1
        block = text[i + 1 : i + 1 + rows]
        if len(block) != rows:
            raise ValueError(f"{path}: truncated value block for {name!r}")
        values = [[float(v) for v in row.split()] for row in block]
        model.params[name] = np.array(values, dtype=np.float64).reshape(shape)
        seen.add(name)
        i += 1 + rows
    missing = expected - seen
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    return model
