"""Streaming metrics, grid search and runtime profiling."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .core import RatingEvent
from .ingestion import Corpus, StreamSplit
from .models import make_model

log = logging.getLogger(__name__)

REF_SIGMAS = (0.5, 1, 2, 4, 8, 16, 32)
REF_C = (0.01, 0.1, 0.2, 0.5, 1)
REF_RHO = (0.01, 0.05, 0.1, 0.2, 0.5)
REF_SIGMA_UV = (0.01, 0.02, 0.04, 0.08, 0.16, 0.32)
REF_K = (5, 10, 20)


def rmse(pairs) -> float:
    """Root mean squared error of ``(prediction, rating)`` pairs."""
    arr = np.asarray(list(pairs), dtype=float)
    if arr.size == 0:
        raise ValueError("rmse of an empty set")
    return float(np.sqrt(np.mean((arr[:, 0] - arr[:, 1]) ** 2)))


def rmse_on(model, events: Sequence[RatingEvent]) -> float:
    pred = model.predict_many(events)
    return rmse(zip(pred, (e.rating for e in events)))


def predictive_log_likelihood(phi: np.ndarray, heldout_docs: Sequence[Sequence[int]], alpha: float,
                              seed: int = 0, gibbs_iters: int = 20) -> float:
    """Per-word log likelihood of held-out text under topics ``phi``.

    The first half of each document (rounded down) is used to estimate its
    topic proportions with ``gibbs_iters`` sweeps of plain LDA Gibbs sampling
    at fixed ``phi``; the second half is scored with
    ``log sum_k theta_hat[k] phi[k, w]``.
    """
    if len(heldout_docs) == 0:
        raise ValueError("empty held-out set")
    phi = np.asarray(phi, dtype=float)
    K = phi.shape[0]
    log_phi = np.log(phi)
    rng = np.random.default_rng(seed)
    total, count = 0.0, 0
    for tokens in heldout_docs:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size < 2:
            raise ValueError("held-out documents need at least 2 tokens")
        half = tokens.size // 2
        seen, held = tokens[:half], tokens[half:]
        z = rng.integers(K, size=half)
        counts = np.bincount(z, minlength=K).astype(np.int64)
        freq = np.empty(K)
        _kernels.gibbs_chain(np.ascontiguousarray(log_phi[:, seen]), z, counts, np.zeros(K), alpha, 0.0,
                             rng.random((gibbs_iters, half)), 0, freq)
        theta = (freq * half + alpha) / (half + K * alpha)
        total += float(np.log(theta @ phi[:, held]).sum())
        count += held.size
    return total / count


@dataclass
class MetricPoint:
    events_seen: int
    rmse_test: float
    rmse_progressive: float
    pred_ll: float
    wall_time: float


CSV_FIELDS = ("events_seen", "rmse_test", "rmse_progressive", "pred_ll")


@dataclass
class MetricTrace:
    """Append-only evaluation trace.

    With ``path`` set, each point is written and flushed as it arrives. The
    CSV omits wall time so that identical runs give identical files; wall
    times go to the JSON summary.
    """

    algorithm: str
    points: list = field(default_factory=list)
    path: Optional[Path] = None

    def __post_init__(self):
        if self.path is not None:
            self.path = Path(self.path)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(CSV_FIELDS)

    def append(self, point: MetricPoint) -> None:
        if self.points and point.events_seen <= self.points[-1].events_seen:
            raise ValueError("events_seen must increase")
        self.points.append(point)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow(_csv_row(point))
                fh.flush()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            w.writerows(_csv_row(p) for p in self.points)

    def summary(self, config: Optional[Mapping] = None) -> dict:
        return {"algorithm": self.algorithm, "config": dict(config or {}),
                "points": [asdict(p) for p in self.points]}

    @property
    def final(self) -> MetricPoint:
        return self.points[-1]


def _csv_row(p: MetricPoint):
    return [p.events_seen] + [repr(float(getattr(p, k))) for k in CSV_FIELDS[1:]]


def run_stream(model, train: Sequence[RatingEvent], test: Sequence[RatingEvent] = (),
               eval_every: Optional[int] = 1000, heldout_docs=None, trace: Optional[MetricTrace] = None,
               progress_every: Optional[int] = None, ll_seed: int = 0) -> MetricTrace:
    """Single pass over ``train`` with progressive and periodic test-set evaluation.

    A final evaluation point is always recorded. Raises FloatingPointError
    when a prediction stops being finite.
    """
    if trace is None:
        trace = MetricTrace(model.name)
    sq_err, n_pred = 0.0, 0
    start = time.perf_counter()

    def evaluate(seen):
        rt = rmse_on(model, test) if len(test) and model.name != "online-lda" else math.nan
        ll = math.nan
        if heldout_docs is not None and hasattr(model, "topic_word"):
            ll = predictive_log_likelihood(model.topic_word(), heldout_docs, model.alpha, seed=ll_seed)
        prog = math.sqrt(sq_err / n_pred) if n_pred else math.nan
        trace.append(MetricPoint(seen, rt, prog, ll, time.perf_counter() - start))

    seen = 0
    for seen, ev in enumerate(train, start=1):
        r_hat = model.process_event(ev)
        if r_hat is not None:
            err = r_hat - ev.rating
            if not math.isfinite(err * err):
                raise FloatingPointError(f"{model.name} diverged at event {seen}: prediction {r_hat}")
            sq_err += err * err
            n_pred += 1
        if eval_every and seen % eval_every == 0:
            evaluate(seen)
        if progress_every and seen % progress_every == 0:
            log.info("%s: %d events, progressive RMSE %.4f", model.name, seen,
                     math.sqrt(sq_err / max(n_pred, 1)))
    if not trace.points or trace.points[-1].events_seen != seen:
        evaluate(seen)
    return trace


def reference_grid(algo: str) -> dict:
    """Hyperparameter ranges searched for each algorithm, as model parameters.

    sigma values become variances for OBCTR; the user/item sigma and rho
    values are used directly as L2 weights and SGD step size.
    """
    K = list(REF_K)
    if algo == "obctr":
        sq = [float(s) ** 2 for s in REF_SIGMAS]
        return {"sigma_eps2": sq, "sigma_r2": sq, "K": K}
    if algo == "pa-i":
        return {"c": list(REF_C), "K": K}
    if algo in ("octr", "sgd-pmf"):
        return {"lam_u": list(REF_SIGMA_UV), "lam_v": list(REF_SIGMA_UV), "eta": list(REF_RHO), "K": K}
    raise ValueError(f"no rating-prediction grid for {algo!r}")


def grid_cells(grid: Mapping[str, Sequence]) -> list[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass
class GridResult:
    best: Optional[dict]
    table: list

    def to_csv(self, path) -> None:
        keys = sorted({k for row in self.table for k in row["config"]})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys + ["validation_rmse", "test_rmse", "error"])
            for row in self.table:
                w.writerow([row["config"].get(k, "") for k in keys]
                           + [repr(row["validation_rmse"]), repr(row["test_rmse"]), row["error"] or ""])


def _run_cell(args):
    algo, params, cell, split, corpus = args
    try:
        model = make_model(algo, {**params, **cell}, corpus)
        run_stream(model, split.train, eval_every=None)
        val = rmse_on(model, split.validation)
        tst = rmse_on(model, split.test) if split.test else math.nan
        if not math.isfinite(val):
            raise FloatingPointError("non-finite validation RMSE")
        return {"config": cell, "validation_rmse": val, "test_rmse": tst, "error": None}
    except Exception as exc:  # a failed cell must not stop the search
        return {"config": cell, "validation_rmse": math.nan, "test_rmse": math.nan,
                "error": f"{type(exc).__name__}: {exc}"}


def grid_search(algo: str, grid: Mapping[str, Sequence], split: StreamSplit, corpus: Optional[Corpus] = None,
                params: Optional[Mapping] = None, jobs: int = 1) -> GridResult:
    """Train one pass per grid cell and pick the lowest validation RMSE.

    Ties go to the cell whose sorted ``(name, value)`` pairs compare first.
    """
    if not split.validation:
        raise ValueError("validation split is empty")
    cells = grid_cells(grid)
    if not cells:
        raise ValueError("empty grid")
    tasks = [(algo, dict(params or {}), cell, split, corpus) for cell in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            table = list(pool.map(_run_cell, tasks))
    else:
        table = [_run_cell(t) for t in tasks]
    ok = [row for row in table if row["error"] is None]
    for row in table:
        if row["error"]:
            log.warning("grid cell %s failed: %s", row["config"], row["error"])
    best = None
    if ok:
        best = min(ok, key=lambda row: (row["validation_rmse"], sorted(row["config"].items())))["config"]
    return GridResult(best, table)


def runtime_profile(factory: Callable[[int], object], K_values: Sequence[int], stream: Sequence[RatingEvent],
                    repeats: int = 3) -> dict:
    """Best-of-``repeats`` wall time of one pass per K, relative to the smallest K.

    ``factory(K)`` must return a fresh model.
    """
    if not K_values:
        raise ValueError("need at least one K")
    times = {}
    for K in K_values:
        best = math.inf
        for _ in range(repeats):
            model = factory(K)
            t0 = time.perf_counter()
            for ev in stream:
                model.process_event(ev)
            best = min(best, time.perf_counter() - t0)
        times[K] = best
    base = times[min(K_values)]
    return {K: {"seconds": t, "ratio": t / base} for K, t in times.items()}


def write_summary(path, trace: MetricTrace, config: Optional[Mapping] = None, extra: Optional[Mapping] = None):
    data = trace.summary(config)
    data.update(extra or {})
    Path(path).write_text(json.dumps(data, indent=1, default=float))
