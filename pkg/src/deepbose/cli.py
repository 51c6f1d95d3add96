"""Command line pipeline.

Every subcommand reads one JSON config (``--config``) whose keys can be
overridden with ``--set section.key=value``. Unset paths fall back to
standard file names inside ``paths.output_dir``, so ``synth`` followed by
the other stages works without editing the config.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from .baseline import write_sparse_features
from .clustering import ApConfig, Codebook, DmaeConfig, fit_lexicon_blocks
from .engine import THREADS_ENV
from .errors import ConfigError, DataError, DivergenceError, ModelMismatchError
from .estimators import BoSEClassifier, DeepBoSEClassifier
from .interpret import emotion_histogram, saliency
from .metrics import metrics
from .model import ModelParams
from .text import (
    Corpus,
    embed_corpus,
    embed_document,
    generate_synthetic_corpus,
    load_corpus,
    load_embeddings,
    load_lexicon,
    stratified_split,
    write_corpus,
    write_embeddings,
    write_lexicon,
)

log = logging.getLogger("deepbose")

DEFAULT_CONFIG = {
    "paths": {
        "embeddings": None,
        "lexicon": None,
        "train": None,
        "val": None,
        "test": None,
        "codebook": None,
        "model": None,
        "output_dir": "out",
    },
    "codebook": {
        "alpha": 100.0,
        "ap_preference": "median",
        "ap_damping": 0.9,
        "ap_max_iter": 200,
        "ap_convergence_window": 15,
        "dmae_lr": 1e-5,
        "dmae_epochs": 100,
        "seed": 0,
    },
    "model": {"pooling": "sum_tfidf", "dense_widths": [64, 64], "dropout": 0.2},
    "training": {
        "mode": "stl",
        "lr": None,
        "epochs": 100,
        "batch_size": 16,
        "seed": 0,
        "class_weighted": True,
        "threshold": 0.5,
        "patience": 10,
        "val_fraction": 0.2,
        "max_tokens": 20000,
    },
    "baseline": {"l2": 1e-3, "epochs": 500, "lr": 0.1, "seed": 0},
    "synth": {
        "n_train": 400,
        "n_test": 100,
        "doc_len": 80,
        "n_emotions": 6,
        "words_per_emotion": 40,
        "dim": 16,
        "class_skew": 0.8,
        "seed": 0,
    },
}

DEFAULT_FILES = {
    "embeddings": "embeddings.vec",
    "lexicon": "lexicon.tsv",
    "train": "train.jsonl",
    "val": "val.jsonl",
    "test": "test.jsonl",
    "codebook": "codebook.json",
    "model": "model.json",
}

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 2, 3, 4


# -- configuration ---------------------------------------------------------


def _merge(base, override, prefix=""):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {prefix}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{key} must be an object")
            _merge(base[key], value, f"{prefix}{key}.")
        else:
            base[key] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        _merge(cfg, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = {}
        leaf = node
        for k in keys[:-1]:
            leaf[k] = {}
            leaf = leaf[k]
        leaf[keys[-1]] = _parse_value(raw)
        _merge(cfg, node)
    return cfg


def config_hash(cfg) -> str:
    """Hash of the hyperparameters; file locations do not enter it."""
    relevant = {k: v for k, v in cfg.items() if k != "paths"}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _path(cfg, key, must_exist=True) -> Path:
    value = cfg["paths"].get(key)
    if value is None:
        value = Path(cfg["paths"]["output_dir"]) / DEFAULT_FILES[key]
    p = Path(value)
    if must_exist and not p.exists():
        raise ConfigError(f"paths.{key}: {p} does not exist")
    return p


def _out_dir(cfg) -> Path:
    out = Path(cfg["paths"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(threads):
    if threads is not None:
        return threads
    return int(os.environ.get(THREADS_ENV, "1"))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- stages ----------------------------------------------------------------


def cmd_synth(cfg):
    s = cfg["synth"]
    total = s["n_train"] + s["n_test"]
    corpus, table, lexicon = generate_synthetic_corpus(
        total, s["doc_len"], s["n_emotions"], s["words_per_emotion"], s["dim"],
        s["class_skew"], s["seed"])
    train, test = stratified_split(corpus, s["n_test"] / total, s["seed"])
    out = _out_dir(cfg)
    paths = {k: out / DEFAULT_FILES[k] for k in ("embeddings", "lexicon", "train", "test")}
    write_embeddings(table, paths["embeddings"])
    write_lexicon(lexicon, paths["lexicon"])
    write_corpus(train, paths["train"])
    write_corpus(test, paths["test"])
    return paths


def cmd_prepare_codebook(cfg, threads=1):
    table = load_embeddings(_path(cfg, "embeddings"))
    lexicon = load_lexicon(_path(cfg, "lexicon"))
    c = cfg["codebook"]
    ap = ApConfig(c["ap_preference"], c["ap_damping"], c["ap_max_iter"],
                  c["ap_convergence_window"])
    dmae = DmaeConfig(c["dmae_lr"], c["dmae_epochs"], c["seed"])
    fits = fit_lexicon_blocks(lexicon, table, c["alpha"], ap, dmae, threads)
    codebook = Codebook.from_blocks([(f.name, f.theta) for f in fits], c["alpha"])
    out = _out_dir(cfg)
    path = _path(cfg, "codebook", must_exist=False)
    codebook.save(path)
    _write_json(out / "codebook.provenance.json", {
        "config_hash": config_hash(cfg),
        "K": codebook.K,
        "emotions": [
            {
                "name": f.name,
                "K_e": int(f.theta.shape[0]),
                "n_words": len(f.words),
                "exemplar_words": [f.words[i] for i in sorted(f.ap.exemplar_indices)],
                "ap_iterations": f.ap.iterations_run,
                "ap_converged": f.ap.converged,
                "dmae_loss": f.log.loss_per_epoch,
            }
            for f in fits
        ],
    })
    return path


def _nonempty(corpus: Corpus, name):
    if len(corpus) == 0:
        raise DataError(f"{name} corpus is empty")
    return corpus


def _labeled(corpus: Corpus, name):
    if any(d.label is None for d in corpus):
        raise DataError(f"{name} corpus contains unlabeled documents")
    return corpus


def cmd_baseline(cfg):
    table = load_embeddings(_path(cfg, "embeddings"))
    codebook = Codebook.load(_path(cfg, "codebook"))
    if codebook.dim != table.dim:
        raise ModelMismatchError(f"codebook width {codebook.dim} != embedding dim {table.dim}")
    max_tokens = cfg["training"]["max_tokens"]
    train = _labeled(_nonempty(load_corpus(_path(cfg, "train")), "train"), "train")
    test = _labeled(_nonempty(load_corpus(_path(cfg, "test")), "test"), "test")
    train_docs = embed_corpus(train, table, max_tokens)
    test_docs = embed_corpus(test, table, max_tokens)
    b = cfg["baseline"]
    out = _out_dir(cfg)
    reports = {}
    for n, name in ((1, "unigram"), (2, "bigram")):
        clf = BoSEClassifier(codebook, n, b["l2"], b["epochs"], b["lr"], b["seed"],
                             cfg["training"]["threshold"])
        clf.fit(train_docs, train.labels.astype(int))
        proba = clf.predict_proba(test_docs)[:, 1]
        reports[name] = metrics(proba, test.labels.astype(int),
                                cfg["training"]["threshold"]).to_dict()
        for split, corpus, docs in (("train", train, train_docs), ("test", test, test_docs)):
            write_sparse_features(out / f"features_{name}_{split}.txt",
                                  [d.id for d in corpus], [d.label for d in corpus],
                                  clf.vectorizer_.counts(docs))
    path = out / "baseline_metrics.json"
    _write_json(path, reports)
    return path


def _classifier(cfg, codebook, threads):
    t, m = cfg["training"], cfg["model"]
    return DeepBoSEClassifier(
        codebook=codebook, hidden_layer_sizes=tuple(m["dense_widths"]), dropout=m["dropout"],
        pooling=m["pooling"], lr=t["lr"], epochs=t["epochs"], batch_size=t["batch_size"],
        class_weighted=t["class_weighted"], mode=t["mode"], patience=t["patience"],
        threshold=t["threshold"], seed=t["seed"], n_jobs=threads)


def cmd_train(cfg, threads=1):
    table = load_embeddings(_path(cfg, "embeddings"))
    codebook = Codebook.load(_path(cfg, "codebook"))
    if codebook.dim != table.dim:
        raise ModelMismatchError(f"codebook width {codebook.dim} != embedding dim {table.dim}")
    t = cfg["training"]
    train = _labeled(_nonempty(load_corpus(_path(cfg, "train")), "train"), "train")
    if cfg["paths"]["val"] is not None:
        val = _labeled(load_corpus(_path(cfg, "val")), "val")
    else:
        train, val = stratified_split(train, t["val_fraction"], t["seed"])
    train_docs = embed_corpus(train, table, t["max_tokens"])
    val_docs = embed_corpus(val, table, t["max_tokens"]) if len(val) else None
    clf = _classifier(cfg, codebook, threads)
    clf.fit(train_docs, train.labels.astype(int), val_docs,
            None if val_docs is None else val.labels.astype(int))
    out = _out_dir(cfg)
    model_path = _path(cfg, "model", must_exist=False)
    clf.params_.save(model_path, meta={
        "config_hash": config_hash(cfg),
        "embedding_dim": table.dim,
        "K": codebook.K,
        "codebook_sha256": _sha256(_path(cfg, "codebook")),
        "best_epoch": clf.history_.best_epoch,
    })
    clf.history_.to_csv(out / "history.csv")
    return model_path


def _load_model(cfg, table):
    params, meta = ModelParams.load(_path(cfg, "model"), with_meta=True)
    dim = meta.get("embedding_dim", params.codebook.dim)
    if dim != table.dim or params.codebook.dim != table.dim:
        raise ModelMismatchError(
            f"model was built for {dim}-dimensional embeddings, table has {table.dim}")
    cb_path = _path(cfg, "codebook", must_exist=False)
    if cb_path.exists():
        K = Codebook.load(cb_path).K
        if K != meta.get("K", params.codebook.K) or K != params.codebook.K:
            raise ModelMismatchError(
                f"codebook file has K={K}, model file has K={params.codebook.K}")
    return params


def cmd_evaluate(cfg):
    table = load_embeddings(_path(cfg, "embeddings"))
    params = _load_model(cfg, table)
    test = _labeled(_nonempty(load_corpus(_path(cfg, "test")), "test"), "test")
    docs = embed_corpus(test, table, cfg["training"]["max_tokens"])
    clf = DeepBoSEClassifier.from_params(params, threshold=cfg["training"]["threshold"])
    report = metrics(clf.predict_proba(docs)[:, 1], test.labels.astype(int),
                     cfg["training"]["threshold"])
    path = _out_dir(cfg) / "metrics.json"
    report.save(path)
    return path


def cmd_explain(cfg, doc_id, split="test"):
    table = load_embeddings(_path(cfg, "embeddings"))
    params = _load_model(cfg, table)
    corpus = load_corpus(_path(cfg, split))
    try:
        doc = corpus.get(doc_id)
    except KeyError:
        raise DataError(f"document {doc_id!r} not found in the {split} corpus") from None
    smap = saliency(embed_document(doc, table, cfg["training"]["max_tokens"]), params)
    path = _out_dir(cfg) / f"saliency_{doc_id}.json"
    smap.save(path)
    return path


def cmd_histogram(cfg, split="test"):
    table = load_embeddings(_path(cfg, "embeddings"))
    params = _load_model(cfg, table)
    corpus = _nonempty(load_corpus(_path(cfg, split)), split)
    docs = embed_corpus(corpus, table, cfg["training"]["max_tokens"])
    out = _out_dir(cfg)
    paths = []
    for population in ("healthy", "depressed"):
        hist = emotion_histogram(docs, params, population)
        path = out / f"histogram_{population}.csv"
        hist.to_csv(path)
        paths.append(path)
    return paths


# -- click wiring ----------------------------------------------------------


def _run(stage, fn):
    try:
        # Non-finite losses are caught explicitly, so numpy's own overflow chatter is noise.
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: log.warning("%s", msg)
            result = fn()
    except ConfigError as exc:
        click.echo(f"error [{stage}]: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except DivergenceError as exc:
        click.echo(f"error [{stage}]: {exc}", err=True)
        sys.exit(EXIT_DIVERGENCE)
    except (DataError, ValueError) as exc:
        click.echo(f"error [{stage}]: {exc}", err=True)
        sys.exit(EXIT_DATA)
    if isinstance(result, (list, tuple)):
        for p in result:
            click.echo(str(p))
    elif isinstance(result, dict):
        for p in result.values():
            click.echo(str(p))
    else:
        click.echo(str(result))


def _common(fn):
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config key by dotted path, e.g. training.lr=1e-3.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                      help="JSON run configuration.")(fn)
    return fn


def _threads_option(fn):
    return click.option("--threads", type=int, default=None,
                        help=f"Worker threads (default: ${THREADS_ENV} or 1).")(fn)


def _config(stage, config_path, overrides):
    try:
        return load_config(config_path, overrides)
    except ConfigError as exc:
        click.echo(f"error [{stage}]: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug).")
def main(verbose):
    """DeepBoSE pipeline: synthetic data, codebooks, baselines, training, analysis."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("synth")
@_common
def synth(config_path, overrides):
    """Write a synthetic corpus, embeddings and lexicon."""
    cfg = _config("synth", config_path, overrides)
    _run("synth", lambda: cmd_synth(cfg))


@main.command("prepare-codebook")
@_common
@_threads_option
def prepare_codebook(config_path, overrides, threads):
    """Cluster each lexicon emotion into sub-emotion codevectors."""
    cfg = _config("prepare-codebook", config_path, overrides)
    _run("prepare-codebook", lambda: cmd_prepare_codebook(cfg, _threads(threads)))


@main.command("baseline")
@_common
def baseline(config_path, overrides):
    """Offline BoSE unigram and bigram baselines."""
    cfg = _config("baseline", config_path, overrides)
    _run("baseline", lambda: cmd_baseline(cfg))


@main.command("train")
@_common
@_threads_option
def train(config_path, overrides, threads):
    """Train DeepBoSE end to end."""
    cfg = _config("train", config_path, overrides)
    _run("train", lambda: cmd_train(cfg, _threads(threads)))


@main.command("evaluate")
@_common
def evaluate(config_path, overrides):
    """Score the test corpus with a trained model."""
    cfg = _config("evaluate", config_path, overrides)
    _run("evaluate", lambda: cmd_evaluate(cfg))


@main.command("explain")
@_common
@click.option("--doc-id", required=True, help="Document to explain.")
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test")
def explain(config_path, overrides, doc_id, split):
    """Token saliency map for one document."""
    cfg = _config("explain", config_path, overrides)
    _run("explain", lambda: cmd_explain(cfg, doc_id, split))


@main.command("histogram")
@_common
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test")
def histogram(config_path, overrides, split):
    """Mean sub-emotion representation of healthy and depressed users."""
    cfg = _config("histogram", config_path, overrides)
    _run("histogram", lambda: cmd_histogram(cfg, split))


if __name__ == "__main__":
    main()
