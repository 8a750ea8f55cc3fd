"""Command line entry point: ``python -m obctr {train,eval,grid,synth}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (must contain ``config_version = 1``), then flags.
Relative data paths that do not exist are looked up under ``$OBCTR_DATA_DIR``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .core import HyperParams
from .evaluation import (
    MetricTrace,
    grid_search,
    reference_grid,
    predictive_log_likelihood,
    rmse_on,
    run_stream,
    write_summary,
)
from .ingestion import CorpusOptions, build_corpus, parse_ratings, read_documents, split_stream, tokenize, write_ratings
from .models import ALGORITHMS, CheckpointError, load_checkpoint, make_model, save_checkpoint
from .synth import generate_synthetic

log = logging.getLogger("obctr")

CONFIG_VERSION = 1
DATA_DIR_ENV = "OBCTR_DATA_DIR"

DEFAULTS = {
    "k": 5, "seed": 0, "eval_every": 1000, "progress_every": 0,
    "min_df": 1, "max_vocab": 8000,
    "users": 200, "items": 100, "ratings_count": 20000, "docs_len": 60, "vocab": 500, "heldout": 50,
}
# flag dest -> model parameter name
MODEL_FLAGS = {
    "k": "K", "alpha": "alpha", "beta": "beta", "sigma_u2": "sigma_u2", "sigma_v2": "sigma_v2",
    "sigma_eps2": "sigma_eps2", "sigma_r2": "sigma_r2", "sweeps": "sweeps", "burn_in": "burn_in",
    "inner_iters": "inner_iters", "pmf_only_fallback": "pmf_only_fallback", "c": "c", "eps": "eps",
    "eta": "eta", "lam_u": "lam_u", "lam_v": "lam_v", "tau0": "tau0", "kappa": "kappa", "seed": "seed",
}


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = _coerce(value.strip())
    if out.pop("config_version", None) != CONFIG_VERSION:
        raise UsageError(f"{path}: missing or unsupported config_version (expected {CONFIG_VERSION})")
    return out


def _coerce(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def resolve_settings(args) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    settings.update({k: v for k, v in vars(args).items() if v is not None and k not in ("func", "config")})
    return settings


def data_path(name) -> Path:
    path = Path(name)
    base = os.environ.get(DATA_DIR_ENV)
    if not path.exists() and not path.is_absolute() and base:
        path = Path(base) / path
    if not path.exists():
        raise FileNotFoundError(f"no such file: {name}")
    return path


def model_params(settings: dict) -> dict:
    return {param: settings[flag] for flag, param in MODEL_FLAGS.items() if settings.get(flag) is not None}


def _load_corpus(settings):
    if not settings.get("docs"):
        return None
    options = CorpusOptions(min_df=settings["min_df"], max_vocab=settings["max_vocab"])
    return build_corpus(data_path(settings["docs"]), options)


def _load_heldout(settings, corpus):
    if not settings.get("heldout_docs") or corpus is None:
        return None
    options = corpus.options
    docs = []
    for text in read_documents(data_path(settings["heldout_docs"])).values():
        ids = [corpus.word_to_id[w] for w in tokenize(text, options) if w in corpus.word_to_id]
        if len(ids) >= 2:
            docs.append(ids)
    return docs or None


def _prepare(settings):
    events = parse_ratings(data_path(settings["ratings"]), strict=settings.get("strict", False))
    corpus = _load_corpus(settings)
    split = split_stream(events, settings["seed"])
    rejected = []
    if corpus is not None:
        split, rejected = split.filter_items(corpus.docs)
        if rejected:
            log.warning("%d events reference items without text", len(rejected))
    return split, corpus, rejected


def _config_comment(settings) -> str:
    return "# config: " + json.dumps(settings, sort_keys=True)


def _prepend(path: Path, line: str) -> None:
    path.write_text(line + "\n" + path.read_text())


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    algo = settings["algo"]
    out = Path(settings.setdefault("out", "run"))
    out.mkdir(parents=True, exist_ok=True)
    split, corpus, rejected = _prepare(settings)
    model = make_model(algo, model_params(settings), corpus)
    heldout = _load_heldout(settings, corpus)
    trace = MetricTrace(algo, path=out / "trace.csv")
    run_stream(model, split.train, split.test, eval_every=settings["eval_every"], heldout_docs=heldout,
               trace=trace, progress_every=settings["progress_every"] or None)
    _prepend(out / "trace.csv", _config_comment(settings))
    save_checkpoint(model, out / "checkpoint.json", settings)
    write_ratings(out / "test.dat", split.test)
    write_ratings(out / "validation.dat", split.validation)
    if rejected:
        write_ratings(out / "rejected.dat", rejected)
    write_summary(out / "summary.json", trace, settings,
                  {"events": {"train": len(split.train), "validation": len(split.validation),
                              "test": len(split.test), "rejected_at_split": len(rejected),
                              "rejected_by_model": model.n_rejected}})
    final = trace.final
    print(f"algorithm={algo} events={final.events_seen} rmse_test={final.rmse_test!r} "
          f"rmse_progressive={final.rmse_progressive!r}")
    return 0


def cmd_eval(args) -> int:
    settings = resolve_settings(args)
    model = load_checkpoint(data_path(settings["checkpoint"]))
    events = parse_ratings(data_path(settings["ratings"]))
    if not events:
        raise ValueError("empty test set")
    result = {"algorithm": model.name, "n": len(events), "rmse": rmse_on(model, events)}
    if settings.get("heldout_docs") and settings.get("docs") and hasattr(model, "topic_word"):
        heldout = _load_heldout(settings, _load_corpus(settings))
        if heldout:
            result["pred_ll"] = predictive_log_likelihood(model.topic_word(), heldout, model.alpha)
    print(" ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in result.items()))
    if settings.get("out"):
        Path(settings["out"]).write_text(
            _config_comment(settings) + "\n" + ",".join(result) + "\n"
            + ",".join(repr(v) if isinstance(v, float) else str(v) for v in result.values()) + "\n")
    return 0


def _parse_grid_sets(items) -> dict:
    grid = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=v1,v2,..., got {item!r}")
        key = MODEL_FLAGS.get(key.replace("-", "_"), key)
        grid[key] = [_coerce(v) for v in values.split(",")]
    return grid


def cmd_grid(args) -> int:
    settings = resolve_settings(args)
    algo = settings["algo"]
    grid = reference_grid(algo) if settings.get("paper_ranges") else {}
    grid.update(_parse_grid_sets(settings.get("set")))
    if not grid:
        raise UsageError("grid needs --paper-ranges or at least one --set")
    out = Path(settings.setdefault("out", "grid"))
    out.mkdir(parents=True, exist_ok=True)
    split, corpus, _ = _prepare(settings)
    base = {k: v for k, v in model_params(settings).items() if k not in grid}
    result = grid_search(algo, grid, split, corpus, base, jobs=settings.get("jobs") or 1)
    result.to_csv(out / "grid.csv")
    _prepend(out / "grid.csv", _config_comment(settings))
    (out / "best.json").write_text(json.dumps({"config": settings, "best": result.best}, indent=1))
    print(f"cells={len(result.table)} best={json.dumps(result.best, sort_keys=True)}")
    return 0 if result.best is not None else 1


def cmd_synth(args) -> int:
    settings = resolve_settings(args)
    hp = HyperParams(**{k: v for k, v in model_params(settings).items()
                        if k in ("K", "alpha", "beta", "sigma_u2", "sigma_eps2", "sigma_r2")})
    corpus, events, truth = generate_synthetic(
        hp, settings["users"], settings["items"], settings["docs_len"], settings["ratings_count"],
        settings["seed"], vocab_size=settings["vocab"], n_heldout_docs=settings["heldout"])
    out = Path(settings.setdefault("out", "synth"))
    out.mkdir(parents=True, exist_ok=True)
    write_ratings(out / "ratings.dat", events)
    corpus.write(out / "docs.tsv", out / "manifest.json")
    with open(out / "heldout.tsv", "w", encoding="utf-8") as fh:
        for n, doc in enumerate(truth.heldout_docs):
            fh.write(f"{n}\t{' '.join(corpus.vocabulary[w] for w in doc)}\n")
    (out / "truth.json").write_text(json.dumps({"config": settings, "truth": json.loads(truth.to_json())}))
    print(f"wrote {len(events)} ratings and {len(corpus.docs)} documents to {out}")
    return 0


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--k", type=int, help="latent dimension / topic count")
    for name in ("alpha", "beta", "sigma-u2", "sigma-v2", "sigma-eps2", "sigma-r2", "c", "eps",
                 "eta", "lam-u", "lam-v", "tau0", "kappa"):
        g.add_argument(f"--{name}", type=float)
    g.add_argument("--sweeps", type=int)
    g.add_argument("--burn-in", type=int)
    g.add_argument("--inner-iters", type=int)
    g.add_argument("--pmf-only-fallback", action="store_true", default=None)


def _add_data_flags(p):
    p.add_argument("--ratings", required=True)
    p.add_argument("--docs")
    p.add_argument("--heldout-docs")
    p.add_argument("--min-df", type=int)
    p.add_argument("--max-vocab", type=int)
    p.add_argument("--strict", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obctr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    algos = sorted(ALGORITHMS)

    p = sub.add_parser("train", help="one pass over the training stream")
    p.add_argument("--algo", required=True, choices=algos)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: run)")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--progress-every", type=int)
    _add_data_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a rating file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--docs")
    p.add_argument("--heldout-docs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="grid search on the validation split")
    p.add_argument("--algo", required=True, choices=[a for a in algos if a != "online-lda"])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: grid)")
    p.add_argument("--paper-ranges", action="store_true", default=None)
    p.add_argument("--set", action="append", metavar="KEY=V1,V2")
    p.add_argument("--jobs", type=int)
    _add_data_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="sample a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--k", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--ratings-count", type=int)
    p.add_argument("--docs-len", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--heldout", type=int)
    p.add_argument("--seed", type=int)
    for name in ("alpha", "beta", "sigma-u2", "sigma-eps2", "sigma-r2"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--out", help="output directory (default: synth)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    del args.verbose
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"obctr: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TypeError, FloatingPointError, CheckpointError) as exc:
        print(f"obctr: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
