"""Experiment configuration (INI with sections) and run manifests."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .bandit import TaskDistribution
from .trainer import TrainConfig

MANIFEST_VERSION = 1
PAPER_NHAT_GRID = (256, 512, 1024, 2048, 4096, 8192)


@dataclass(frozen=True)
class AnalysisConfig:
    ridge: float = 0.01
    bandwidth: Optional[float] = None
    sim_episodes: int = 1000
    eval_episodes: int = 1000
    eval_mode: str = "map"


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskDistribution = TaskDistribution()
    train: TrainConfig = TrainConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    nhat_grid: tuple = PAPER_NHAT_GRID
    seeds: tuple = tuple(range(10))
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.nhat_grid or not self.seeds:
            raise ValueError("nhat grid and seed list must be non-empty")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["nhat_grid"] = [None if n is None else n for n in self.nhat_grid]
        d["seeds"] = list(self.seeds)
        return d


def _parse_value(raw: str, typ):
    raw = raw.strip()
    if raw.lower() in ("none", "inf", ""):
        return None
    if typ in (int, "int", Optional[int], "Optional[int]"):
        return int(raw)
    if typ in (float, "float", Optional[float], "Optional[float]"):
        return float(raw)
    if typ in (bool, "bool"):
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def _section(parser, name, cls, base):
    if not parser.has_section(name):
        return base
    known = {f.name: f.type for f in fields(cls)}
    updates = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ValueError(f"unknown key {key!r} in [{name}]")
        updates[key] = _parse_value(raw, known[key])
    return dataclasses.replace(base, **updates)


def _parse_grid(raw: str):
    return tuple(_parse_value(v, "Optional[int]") for v in raw.split(",") if v.strip())


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an INI file; every key is optional and defaults live in the dataclasses.

    Sections: [task], [train], [analysis], [grid] (nhat, seeds), [output] (dir).
    The [grid] nhat list accepts `none` for the unconstrained (KL weight 0) model.
    """
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        task = _section(parser, "task", TaskDistribution, cfg.task)
        train = _section(parser, "train", TrainConfig, cfg.train)
        analysis = _section(parser, "analysis", AnalysisConfig, cfg.analysis)
        nhat, seeds = cfg.nhat_grid, cfg.seeds
        if parser.has_section("grid"):
            g = dict(parser.items("grid"))
            unknown = set(g) - {"nhat", "seeds"}
            if unknown:
                raise ValueError(f"unknown keys in [grid]: {sorted(unknown)}")
            nhat = _parse_grid(g["nhat"]) if "nhat" in g else nhat
            seeds = tuple(int(s) for s in g["seeds"].split(",")) if "seeds" in g else seeds
        out = parser.get("output", "dir", fallback=cfg.output_dir)
        cfg = ExperimentConfig(task, train, analysis, nhat, seeds, out)
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


# -- manifests ----------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list = field(default_factory=list)
    files: list = field(default_factory=list)   # [{"path", "sha256"}]
    failures: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    format_version: int = MANIFEST_VERSION

    def add_file(self, path, root) -> None:
        rel = os.path.relpath(path, root)
        self.files.append({"path": rel.replace(os.sep, "/"), "sha256": sha256_file(path)})

    def write(self, root, name: Optional[str] = None) -> Path:
        self.files.sort(key=lambda f: f["path"])
        path = Path(root) / (name or f"manifest-{self.command}.json")
        text = json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
        return path


def verify_manifest(path) -> list[str]:
    """Files whose hashes no longer match (empty list when everything verifies)."""
    root = Path(path).parent
    data = json.loads(Path(path).read_text())
    bad = []
    for f in data["files"]:
        p = root / f["path"]
        if not p.exists() or sha256_file(p) != f["sha256"]:
            bad.append(f["path"])
    return bad
