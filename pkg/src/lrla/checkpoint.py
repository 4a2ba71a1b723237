"""Self-describing checkpoint files.

Layout: 8-byte magic, little-endian uint64 manifest length, UTF-8 JSON
manifest, then the arrays listed in the manifest as contiguous
little-endian float64 data in manifest order.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .bandit import TaskDistribution
from .net import NetShape
from .trainer import TrainConfig, TrainState
from .varbayes import PHI_NAMES, VariationalPosterior, group_index

MAGIC = b"LRLACKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: TrainConfig
    dist: TaskDistribution
    posterior: VariationalPosterior
    diagnostics: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    episode: int = 0

    @classmethod
    def from_state(cls, state: TrainState, cfg: TrainConfig, dist: TaskDistribution) -> "Checkpoint":
        diag = np.array(state.diagnostics, dtype=np.float64).reshape(-1, 4)
        return cls(cfg, dist, state.posterior.copy(), diag, state.episode)


def _grouping(shape: NetShape) -> dict:
    H, A = shape.hidden_dim, shape.output_dim
    blocks = [{"block": g, "params": [f"W_{g}", f"U_{g}", f"b_{g}"], "first_group": k * H,
               "num_groups": H} for k, g in enumerate("zrh")]
    blocks.append({"block": "q", "params": ["W_q", "b_q"], "first_group": 3 * H, "num_groups": A})
    return {"scheme": "one group per output row of each block", "num_groups": 3 * H + A,
            "blocks": blocks}


def encode(ckpt: Checkpoint) -> bytes:
    arrays = {name: ckpt.posterior.phi[name] for name in PHI_NAMES}
    arrays["diagnostics"] = ckpt.diagnostics
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": asdict(ckpt.config),
        "task_distribution": asdict(ckpt.dist),
        "net_shape": asdict(ckpt.posterior.shape),
        "grouping": _grouping(ckpt.posterior.shape),
        "episode": ckpt.episode,
        "diagnostic_columns": ["episode", "loss", "kl", "mean_regret_window"],
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return MAGIC + struct.pack("<Q", len(head)) + head + body


def decode(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest['format_version']}")
    off = 16 + n
    arrays = {}
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off) \
            .reshape(entry["shape"]).astype(np.float64)
        off += 8 * count
    if off != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    shape = NetShape(**manifest["net_shape"])
    if manifest["grouping"]["num_groups"] != int(group_index(shape).max()) + 1:
        raise ValueError("grouping map does not match the network shape")
    posterior = VariationalPosterior(shape, {k: arrays[k] for k in PHI_NAMES})
    return Checkpoint(TrainConfig(**manifest["config"]),
                      TaskDistribution(**manifest["task_distribution"]),
                      posterior, arrays["diagnostics"], manifest["episode"])


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
