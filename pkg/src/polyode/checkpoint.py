"""Plain-text model checkpoints.

Format (version 1)::

    polyode-checkpoint 1
    config <single-line JSON of the ModelConfig>
    array <name> <ndim> <dim_0> ... <dim_{ndim-1}>
    <values, row-major, one float per line in repr() form>
    ...
    end

Floats are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .architectures import ModelConfig
from .basis import BasisKind

MAGIC = "polyode-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_to_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["arch"] = cfg.arch.value
    d["activation"] = cfg.activation.value
    d["basis"] = {"kind": cfg.basis.kind.value, "degree": cfg.basis.degree}
    return d


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    b = d.pop("basis")
    return ModelConfig(basis=BasisKind(b["kind"], b["degree"]), **d)


def save(path, cfg: ModelConfig, params: dict):
    lines = [f"{MAGIC} {VERSION}", "config " + json.dumps(config_to_dict(cfg), sort_keys=True)]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=float)
        lines.append(f"array {name} {arr.ndim} " + " ".join(str(s) for s in arr.shape))
        lines.extend(repr(float(v)) for v in arr.ravel(order="C"))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise CheckpointError(f"{path}: not a version-{VERSION} checkpoint")
    if not lines[1].startswith("config "):
        raise CheckpointError(f"{path}: missing config line")
    cfg = config_from_dict(json.loads(lines[1][len("config "):]))
    params = {}
    i = 2
    while i < len(lines) and lines[i] != "end":
        head = lines[i].split()
        if head[0] != "array":
            raise CheckpointError(f"{path}: line {i + 1}: expected array header")
        name, ndim = head[1], int(head[2])
        shape = tuple(int(s) for s in head[3:3 + ndim])
        n = int(np.prod(shape)) if shape else 1
        vals = [float(v) for v in lines[i + 1:i + 1 + n]]
        if len(vals) != n:
            raise CheckpointError(f"{path}: array {name} truncated")
        params[name] = np.array(vals).reshape(shape)
        i += 1 + n
    if i >= len(lines):
        raise CheckpointError(f"{path}: missing end marker")
    return cfg, params
