"""Self-describing scorer checkpoints.

Layout (little-endian)::

    b"PKQN" | u16 version | u32 header length | header JSON (utf-8)
    | u64 parameter count | float32[parameter count]

The header lists each network's architecture descriptor and the
``(name, shape)`` of its tensors in storage order.  A JSON sidecar next to the
file (``<path>.json``) carries the training schedule and config hash.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .scorers import build_scorer

MAGIC = b"PKQN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def checkpoint_bytes(nets: dict[str, nn.Module]) -> bytes:
    header = {"networks": []}
    chunks = []
    for name in sorted(nets):
        net = nets[name]
        tensors = []
        for tname, t in net.state_dict().items():
            tensors.append([tname, list(t.shape)])
            chunks.append(t.detach().cpu().numpy().astype("<f4").ravel())
        header["networks"].append({"name": name, "descriptor": net.descriptor, "tensors": tensors})
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    params = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    return MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob + struct.pack("<Q", params.size) + params.tobytes()


def save_checkpoint(path: str | Path, nets: dict[str, nn.Module], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(nets))
    sidecar_path(path).write_text(json.dumps(meta or {}, indent=2, sort_keys=True) + "\n")
    return path


def parse_checkpoint(data: bytes) -> dict[str, nn.Module]:
    if data[:4] != MAGIC:
        raise CheckpointError("not a PKQN checkpoint")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 10
    try:
        header = json.loads(data[off : off + hlen])
    except ValueError as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    off += hlen
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) != off + 4 * count:
        raise CheckpointError("parameter array length does not match the header")
    params = np.frombuffer(data, dtype="<f4", count=count, offset=off)
    nets: dict[str, nn.Module] = {}
    pos = 0
    for entry in header["networks"]:
        net = build_scorer(entry["descriptor"])
        state = {}
        for tname, shape in entry["tensors"]:
            n = int(np.prod(shape, dtype=np.int64))
            state[tname] = torch.from_numpy(params[pos : pos + n].astype(np.float32).reshape(shape))
            pos += n
        net.load_state_dict(state)
        nets[entry["name"]] = net
    if pos != count:
        raise CheckpointError("unused parameters in checkpoint")
    return nets


def load_checkpoint(path: str | Path) -> tuple[dict[str, nn.Module], dict]:
    path = Path(path)
    nets = parse_checkpoint(path.read_bytes())
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return nets, meta
