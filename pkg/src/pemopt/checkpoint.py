"""Binary kernel checkpoints.

Layout::

    b"PEMC" | version: u32 LE | header length: u32 LE | header (UTF-8 JSON)
    | float64 LE point values, PEM by PEM in plan order

The header carries the iteration counter, the optimizer configuration and,
per layer, the layer shape and ensemble plan (same JSON as plan files).
Everything is written deterministically, so equal states give equal bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsemblePlan, LayerShape
from .errors import CheckpointError, InvalidPoint, UnsupportedVersion
from .gsgd import OptimizerConfig, OptimizerState, RhoPolicy, ScheduleConfig, LayerEnsemble
from .manifolds import INPUT_TOL
from .product import product_residuals

MAGIC = b"PEMC"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


def _header(state: OptimizerState) -> dict:
    return {
        "iteration": state.t,
        "schedule": state.config.schedule.to_dict(),
        "rho_policy": state.config.rho_policy.to_dict(),
        "denominator": state.config.denominator,
        "layers": [
            {"shape": layer.shape.to_dict(), "plan": layer.plan.to_dict()}
            for layer in state.layers
        ],
    }


def dumps(state: OptimizerState) -> bytes:
    header = json.dumps(_header(state), sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(
        np.asarray(p, dtype="<f8").tobytes() for pts in state.points for p in pts
    )
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + body


def save(state: OptimizerState, path):
    with open(path, "wb") as fh:
        fh.write(dumps(state))


@dataclass
class LoadedCheckpoint:
    state: OptimizerState
    header: dict
    residuals: list  # per layer, per PEM: array of component residuals

    @property
    def max_residual(self) -> float:
        return max((float(r.max()) for layer in self.residuals for r in layer), default=0.0)


def loads(raw: bytes, validate=True) -> LoadedCheckpoint:
    if len(raw) < _PREFIX.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise UnsupportedVersion(
            f"unsupported checkpoint version {version} (this build reads version {VERSION})"
        )
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode())
        config = OptimizerConfig(
            schedule=ScheduleConfig.from_dict(header["schedule"]),
            rho_policy=RhoPolicy.from_dict(header["rho_policy"]),
            denominator=header["denominator"],
        )
        layers = tuple(
            LayerEnsemble.build(LayerShape(**entry["shape"]), EnsemblePlan.from_dict(entry["plan"]))
            for entry in header["layers"]
        )
        t = int(header["iteration"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

    sizes = [M.total_ambient_dim for layer in layers for M in layer.products]
    body = raw[_PREFIX.size + hlen:]
    if len(body) != 8 * sum(sizes):
        raise CheckpointError(
            f"checkpoint body has {len(body)} bytes, expected {8 * sum(sizes)}"
        )
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    points, residuals, pos = [], [], 0
    for layer in layers:
        pts, res = [], []
        for M in layer.products:
            p = values[pos:pos + M.total_ambient_dim].copy()
            pos += M.total_ambient_dim
            pts.append(p)
            r = product_residuals(M, p)
            res.append(np.where(np.isfinite(r), r, np.inf))
        points.append(tuple(pts))
        residuals.append(res)
    ck = LoadedCheckpoint(OptimizerState(t, layers, tuple(points), config), header, residuals)
    if validate and not ck.max_residual < INPUT_TOL:
        raise InvalidPoint(
            f"checkpoint point violates its constraint: residual {ck.max_residual:.3e}"
        )
    return ck


def load(path, validate=True) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        return loads(fh.read(), validate=validate)
