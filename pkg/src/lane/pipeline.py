"""Pipeline commands: prepare, extract-prefs, train, evaluate, explain, sweep.

Each command reads and writes only its own artifact directory under the run
workdir and refuses to start when an upstream artifact is missing, naming the
command that produces it. Every artifact directory carries a manifest with the
config hash and code version so runs stay attributable and reproducible.

Layout under <workdir>/:
    data/     filtered.jsonl catalog.jsonl split.jsonl
    cache/    embedding cache (binary sidecar + JSON index)
    prefs/    preferences.jsonl dropped.jsonl
    model/    checkpoint.pt checkpoint.json history.jsonl
    eval/     metrics_<split>.json [per_user_<split>.csv]
    explain/  explanations.jsonl
    sweep/    table.csv <metric>.png runs/<value>/...
"""

from __future__ import annotations

import copy
import csv
import json
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import RunConfig, config_hash
from .corpus import (
    SplitDataset,
    build_fixed_sequence,
    kcore_filter,
    leave_one_out_split,
    load_interactions,
    read_catalog_jsonl,
    read_split_jsonl,
    restrict_catalog,
    write_catalog_jsonl,
    write_log_jsonl,
    write_split_jsonl,
)
from .encoders import EmbeddingCache, build_encoder, encode_texts, encode_titles
from .errors import MissingArtifactError
from .evaluation import evaluate_model
from .explain import ExplanationStore, generate_explanation
from .llm import build_llm_client
from .model import LaneModel, ModelConfig
from .preferences import PreferenceCache, extract_preferences
from .training import (
    PreparedData,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    seed_everything,
    train_model,
)


def _workdir(config: RunConfig) -> Path:
    return Path(config.workdir)


def _write_manifest(directory: Path, config: RunConfig, command: str, **extra) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "version": __version__,
        "seed": config.seed,
    }
    manifest.update(extra)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path}; run `lane {producer}` first")
    return path


# -- prepare ---------------------------------------------------------------------


def prepare(config: RunConfig) -> dict:
    """Ingest raw events, k-core filter, split, and emit inspection JSONL."""
    if not config.corpus.input_path:
        raise MissingArtifactError("corpus.input_path is not set in the config")
    log, catalog = load_interactions(config.corpus.input_path, config.corpus.input_format)
    filtered = kcore_filter(log, config.corpus.min_interactions)
    catalog = restrict_catalog(catalog, filtered)
    split = leave_one_out_split(filtered, catalog)

    out = _workdir(config) / "data"
    out.mkdir(parents=True, exist_ok=True)
    write_log_jsonl(filtered, out / "filtered.jsonl")
    write_catalog_jsonl(catalog, out / "catalog.jsonl")
    write_split_jsonl(split, out / "split.jsonl")
    stats = {
        "events": len(filtered),
        "users": len(split.users),
        "items": len(catalog),
        "eval_users": len(split.eval_users()),
    }
    _write_manifest(out, config, "prepare", **stats)
    return stats


def load_data_artifacts(config: RunConfig):
    data_dir = _workdir(config) / "data"
    catalog = read_catalog_jsonl(_require(data_dir / "catalog.jsonl", "prepare"))
    split = read_split_jsonl(_require(data_dir / "split.jsonl", "prepare"))
    return catalog, split


# -- extract-prefs ----------------------------------------------------------------


def extract_prefs(config: RunConfig) -> dict:
    """LLM preference extraction from each user's training prefix, cached."""
    catalog, split = load_data_artifacts(config)
    client = build_llm_client(
        config.preferences.llm,
        seed=config.seed,
        rate_limit=config.preferences.rate_limit,
        max_retries=config.preferences.max_retries,
    )
    cache = PreferenceCache(_workdir(config) / "prefs")
    n = config.sequence.n
    extracted = dropped = 0
    for user_id, user in split.users.items():
        if not user.train:
            continue
        titles = [catalog.title_of(i) for i in user.train[-n:]]
        result = extract_preferences(user_id, titles, client, config.preferences.m, cache)
        if result is None:
            dropped += 1
        else:
            extracted += 1
    stats = {"extracted": extracted, "dropped": dropped}
    _write_manifest(_workdir(config) / "prefs", config, "extract-prefs", **stats)
    return stats


# -- shared assembly --------------------------------------------------------------


def model_config_from(config: RunConfig) -> ModelConfig:
    return ModelConfig(
        n=config.sequence.n,
        dim=config.encoder.dim,
        backbone_variant=config.backbone.variant,
        backbone_blocks=config.backbone.blocks,
        backbone_heads=config.backbone.heads,
        align_heads=config.alignment.heads,
        align_dk=config.alignment.d_k,
        dropout=config.trainer.dropout,
        freeze_item_embeddings=config.trainer.freeze_item_embeddings,
        use_alignment=config.alignment.enabled,
    )


def train_config_from(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        learning_rate=config.trainer.learning_rate,
        batch_size=config.trainer.batch_size,
        max_epochs=config.trainer.max_epochs,
        patience=config.trainer.patience,
        seed=config.seed,
        eval_k=max(config.evaluator.ks),
        eval_num_negatives=config.evaluator.num_negatives,
    )


def build_prepared_data(config: RunConfig):
    """Catalog, split, title matrix and per-user preference embeddings."""
    catalog, split = load_data_artifacts(config)
    encoder = build_encoder(
        config.encoder.name,
        config.encoder.dim,
        seed=config.encoder.seed,
        model_name=config.encoder.model_name or None,
    )
    enc_cache = EmbeddingCache(_workdir(config) / "cache")
    M = encode_titles(catalog, encoder, enc_cache)

    pref_dir = _workdir(config) / "prefs"
    _require(pref_dir / "preferences.jsonl", "extract-prefs")
    pref_cache = PreferenceCache(pref_dir)
    P: dict[str, np.ndarray] = {}
    for user_id in pref_cache.users():
        prefs = pref_cache.get(user_id)
        P[user_id] = encode_texts(list(prefs.preferences), encoder, enc_cache)

    data = PreparedData(split=split, M=M.values, P=P)
    return data, catalog, pref_cache, encoder, enc_cache


# -- train -----------------------------------------------------------------------


def train(config: RunConfig) -> dict:
    data, _, _, _, _ = build_prepared_data(config)
    seed_everything(config.seed)
    model = LaneModel(data.M, model_config_from(config))
    model_dir = _workdir(config) / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    result = train_model(data, model, train_config_from(config), log_path=model_dir / "history.jsonl")
    save_checkpoint(
        model_dir / "checkpoint.pt",
        model,
        train_config_from(config),
        result,
        extra={"run_config": config.to_dict(), "config_hash": config_hash(config)},
    )
    stats = {
        "best_epoch": result.best_epoch,
        "best_valid_ndcg": result.best_valid_ndcg,
        "epochs_run": result.epochs_run,
    }
    _write_manifest(model_dir, config, "train", **stats)
    return stats


def load_trained_model(config: RunConfig) -> tuple[LaneModel, dict]:
    path = _require(_workdir(config) / "model" / "checkpoint.pt", "train")
    return load_checkpoint(path)


# -- evaluate --------------------------------------------------------------------


def evaluate(config: RunConfig, split: str = "test") -> dict:
    model, _ = load_trained_model(config)
    data, _, _, _, _ = build_prepared_data(config)
    eval_dir = _workdir(config) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)

    metrics: dict[str, dict] = {}
    per_user_rows: list[dict] = []
    for k in sorted(config.evaluator.ks):
        report = evaluate_model(
            model,
            data.split,
            data.P,
            split=split,
            k=k,
            num_negatives=config.evaluator.num_negatives,
            seed=config.seed,
            keep_per_user=config.evaluator.per_user_csv,
        )
        metrics[str(k)] = {
            "hr_at_k": report.hr_at_k,
            "ndcg_at_k": report.ndcg_at_k,
            "user_count": report.user_count,
            "skipped": report.skipped,
            "defined": report.defined,
        }
        if config.evaluator.per_user_csv and report.per_user:
            per_user_rows = report.per_user

    payload = {
        "split": split,
        "seed": config.seed,
        "num_negatives": config.evaluator.num_negatives,
        "metrics": metrics,
    }
    (eval_dir / f"metrics_{split}.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if per_user_rows:
        with (eval_dir / f"per_user_{split}.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["user_id", "rank"])
            writer.writeheader()
            writer.writerows(per_user_rows)
    _write_manifest(eval_dir, config, "evaluate", split=split)
    return payload


# -- explain ---------------------------------------------------------------------


def explain_users(config: RunConfig, limit: int | None = None) -> dict:
    model, _ = load_trained_model(config)
    data, catalog, pref_cache, _, _ = build_prepared_data(config)
    client = build_llm_client(
        config.preferences.llm,
        seed=config.seed,
        rate_limit=config.preferences.rate_limit,
        max_retries=config.preferences.max_retries,
    )
    out_dir = _workdir(config) / "explain"
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ExplanationStore(out_dir / "explanations.jsonl")

    limit = limit if limit is not None else config.explain.limit
    n = model.config.n
    generated = unavailable = skipped = 0
    for user_id in data.split.eval_users()[:limit]:
        user = data.split.users[user_id]
        prefs = pref_cache.get(user_id)
        if prefs is None or user_id not in data.P:
            skipped += 1
            continue
        prefix = list(user.train) + [user.valid]
        padded = build_fixed_sequence(prefix, n)
        indices = torch.from_numpy(padded.indices).unsqueeze(0)
        mask = torch.from_numpy(padded.valid_mask).unsqueeze(0)
        p_tensor = torch.from_numpy(data.P[user_id]).unsqueeze(0).to(next(model.parameters()).dtype)
        with torch.no_grad():
            omega = model.preference_weights(indices, mask, p_tensor)[0].cpu().numpy()
        titles = [catalog.title_of(i) for i in prefix[-n:]]
        record = generate_explanation(
            user_id=user_id,
            titles=titles,
            preferences=list(prefs.preferences),
            omega=omega,
            target_title=catalog.title_of(user.test),
            client=client,
            store=store,
            target_id=catalog.items[user.test - 1].item_id,
        )
        if record is None:
            unavailable += 1
        else:
            generated += 1
    stats = {"generated": generated, "unavailable": unavailable, "skipped": skipped}
    _write_manifest(out_dir, config, "explain", **stats)
    return stats


# -- sweep -----------------------------------------------------------------------


def _set_dotted(config: RunConfig, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        node = getattr(node, part)
    setattr(node, parts[-1], value)


def sweep(config: RunConfig) -> list[dict]:
    """Vary one hyperparameter over its grid, defaults elsewhere; emit table + plots."""
    parameter = config.sweep.parameter
    split = config.sweep.split
    sweep_dir = _workdir(config) / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    for value in config.sweep.values:
        sub = copy.deepcopy(config)
        _set_dotted(sub, parameter, value)
        sub.workdir = str(sweep_dir / "runs" / f"{parameter.replace('.', '_')}={value}")
        sub.validate()
        prepare(sub)
        extract_prefs(sub)
        train(sub)
        payload = evaluate(sub, split=split)
        row: dict = {"parameter": parameter, "value": value}
        for k, m in payload["metrics"].items():
            row[f"hr_at_{k}"] = m["hr_at_k"]
            row[f"ndcg_at_{k}"] = m["ndcg_at_k"]
        rows.append(row)

    fieldnames = list(rows[0].keys()) if rows else ["parameter", "value"]
    with (sweep_dir / "table.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    _plot_sweep(sweep_dir, rows, parameter)
    _write_manifest(sweep_dir, config, "sweep", parameter=parameter, points=len(rows))
    return rows


def _plot_sweep(sweep_dir: Path, rows: list[dict], parameter: str) -> None:
    if not rows:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metric_names = [key for key in rows[0] if key not in ("parameter", "value")]
    xs = [row["value"] for row in rows]
    for metric in metric_names:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, [row[metric] for row in rows], marker="o")
        ax.set_xlabel(parameter)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs {parameter}")
        fig.tight_layout()
        fig.savefig(sweep_dir / f"{metric}.png", dpi=120)
        plt.close(fig)
