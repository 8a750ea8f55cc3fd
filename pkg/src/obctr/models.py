"""Algorithm registry and JSON checkpoints."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Mapping, Optional

from .baselines import OCTR, PAI, SGDPMF, OnlineLDA
from .core import HyperParams
from .engine import OBCTR
from .ingestion import Corpus

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

ALGORITHMS = {
    "obctr": OBCTR,
    "octr": OCTR,
    "pa-i": PAI,
    "sgd-pmf": SGDPMF,
    "online-lda": OnlineLDA,
}

_HP_KEYS = {"K", "alpha", "beta", "sigma_u2", "sigma_v2", "sigma_eps2", "sigma_r2", "sweeps", "burn_in"}
_ACCEPTED = {
    "obctr": _HP_KEYS | {"seed", "inner_iters", "pmf_only_fallback"},
    "octr": {"K", "alpha", "beta", "tau0", "kappa", "corpus_size", "eta", "lam_u", "lam_v", "seed", "init_scale"},
    "pa-i": {"K", "c", "eps", "seed", "init_scale"},
    "sgd-pmf": {"K", "eta", "lam_u", "lam_v", "seed", "init_scale"},
    "online-lda": {"K", "alpha", "beta", "tau0", "kappa", "corpus_size", "seed"},
}
ALL_PARAMS = set().union(*_ACCEPTED.values())


class CheckpointError(ValueError):
    pass


def make_model(algo: str, params: Mapping, corpus: Optional[Corpus] = None):
    """Build a fresh model; parameters the algorithm does not use are ignored."""
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {sorted(ALGORITHMS)}")
    unknown = set(params) - ALL_PARAMS
    if unknown:
        raise ValueError(f"unknown parameters: {sorted(unknown)}")
    p = {k: v for k, v in params.items() if k in _ACCEPTED[algo] and v is not None}
    ignored = set(params) - set(p)
    if ignored:
        log.debug("%s ignores parameters %s", algo, sorted(ignored))
    if algo in ("obctr", "octr", "online-lda") and corpus is None:
        raise ValueError(f"{algo} needs an item text corpus")
    if algo == "obctr":
        hp = HyperParams(**{k: v for k, v in p.items() if k in _HP_KEYS})
        rest = {k: v for k, v in p.items() if k not in _HP_KEYS}
        return OBCTR(hp, corpus.D, corpus.docs, **rest)
    if algo in ("octr", "online-lda"):
        K = p.pop("K", 5)
        return ALGORITHMS[algo](K, corpus.D, corpus.docs, **p)
    K = p.pop("K", 5)
    return ALGORITHMS[algo](K, **p)


def save_checkpoint(model, path, config: Optional[Mapping] = None) -> None:
    doc = {
        "format": "obctr-checkpoint",
        "version": CHECKPOINT_VERSION,
        "algorithm": model.name,
        "config": dict(config or {}),
        "state": model.to_state(),
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "obctr-checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {doc.get('version')} unsupported (expected {CHECKPOINT_VERSION})")
    cls = ALGORITHMS.get(doc["algorithm"])
    if cls is None:
        raise CheckpointError(f"unknown algorithm {doc['algorithm']!r} in checkpoint")
    return cls.from_state(doc["state"])
