"""Training loop: masked binary cross-entropy with sampled negatives.

Each training step for a user takes the padded prefix of their training items,
uses the item at position t+1 as the positive for position t, and pairs it
with one fresh uniformly-sampled negative drawn outside the user's history.
Pad positions are masked out of the loss. Adam optimizes every trainable
parameter; early stopping watches validation NDCG@k and restores the best
state. Negatives are resampled every epoch.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import SplitDataset, build_fixed_sequence
from .errors import NumericError, SamplingError
from .evaluation import evaluate_model
from .model import LaneModel, ModelConfig


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    eval_k: int = 10
    eval_num_negatives: int = 100

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class PreparedData:
    """Everything the trainer and evaluator consume for one corpus."""

    split: SplitDataset
    M: np.ndarray  # (|I|+1) x d, row 0 zero
    P: dict[str, np.ndarray]  # user -> (m x d) preference embeddings

    @property
    def item_count(self) -> int:
        return self.M.shape[0] - 1


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def sample_negative(item_count: int, user_items: set[int], rng: np.random.Generator) -> int:
    """One uniform draw from items 1..item_count outside user_items (never pad)."""
    owned = {i for i in user_items if 1 <= i <= item_count}
    if len(owned) >= item_count:
        raise SamplingError("no item outside the user's history to sample")
    while True:
        candidate = int(rng.integers(1, item_count + 1))
        if candidate not in owned:
            return candidate


def sequence_bce_loss(
    pos_scores: torch.Tensor, neg_scores: torch.Tensor, valid_mask: torch.Tensor
) -> torch.Tensor:
    """-sum over valid positions of [log sigmoid(r_pos) + log(1 - sigmoid(r_neg))].

    Uses log-sigmoid for numerical stability; masked positions contribute
    exactly zero. Summed over positions and over the batch.
    """
    mask = valid_mask.to(pos_scores.dtype)
    per_pos = F.logsigmoid(pos_scores) + F.logsigmoid(-neg_scores)
    return -(per_pos * mask).sum()


@dataclass
class TrainResult:
    model: LaneModel
    best_epoch: int
    best_valid_ndcg: float
    epochs_run: int
    history: list[dict] = field(default_factory=list)


def _training_rows(data: PreparedData, n: int, need_preferences: bool):
    """Per-user fixed tensors reused across epochs: input, positives, mask, eligibles."""
    rows = []
    item_ids = np.arange(1, data.item_count + 1)
    for user_id, s in data.split.users.items():
        if len(s.train) < 2:
            continue
        if need_preferences and user_id not in data.P:
            continue
        inp = build_fixed_sequence(list(s.train[:-1]), n)
        pos = build_fixed_sequence(list(s.train[1:]), n)
        owned = np.array(sorted(set(s.all_items())))
        eligible = np.setdiff1d(item_ids, owned, assume_unique=False)
        if len(eligible) == 0:
            raise SamplingError(f"user {user_id!r} interacted with every item; cannot sample negatives")
        rows.append((user_id, inp.indices, pos.indices, inp.valid_mask, eligible))
    return rows


def train_model(
    data: PreparedData,
    model: LaneModel,
    config: TrainConfig,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Optimize the model with Adam and early-stop on validation NDCG@k."""
    seed_everything(config.seed)
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    n = model.config.n
    need_p = model.alignment is not None

    rows = _training_rows(data, n, need_p)
    if not rows:
        raise ValueError("no trainable users (need >= 2 training items and preferences)")

    optimizer = torch.optim.Adam(
        (p for p in model.parameters() if p.requires_grad),
        lr=config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
    )

    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    best_metric = float("-inf")
    best_epoch = 0
    best_state: dict[str, torch.Tensor] | None = None
    bad_epochs = 0
    history: list[dict] = []
    epochs_run = 0

    try:
        for epoch in range(1, config.max_epochs + 1):
            epochs_run = epoch
            epoch_rng = np.random.default_rng([config.seed, epoch])
            order = epoch_rng.permutation(len(rows))

            model.train()
            total_loss = 0.0
            total_positions = 0
            for batch_no, start in enumerate(range(0, len(rows), config.batch_size)):
                batch = [rows[i] for i in order[start : start + config.batch_size]]
                inp = torch.from_numpy(np.stack([r[1] for r in batch])).to(device)
                pos = torch.from_numpy(np.stack([r[2] for r in batch])).to(device)
                mask_np = np.stack([r[3] for r in batch])
                mask = torch.from_numpy(mask_np).to(device)
                neg_np = np.zeros_like(mask_np, dtype=np.int64)
                for b, (_, _, _, m_row, eligible) in enumerate(batch):
                    count = int(m_row.sum())
                    neg_np[b, m_row] = epoch_rng.choice(eligible, size=count)
                neg = torch.from_numpy(neg_np).to(device)
                p_tensor = None
                if need_p:
                    p_tensor = torch.from_numpy(np.stack([data.P[r[0]] for r in batch])).to(
                        device=device, dtype=dtype
                    )

                features = model(inp, mask, p_tensor)
                pos_scores = (features * model.item_emb(pos)).sum(dim=-1)
                neg_scores = (features * model.item_emb(neg)).sum(dim=-1)
                loss = sequence_bce_loss(pos_scores, neg_scores, mask)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_no}")

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total_loss += float(loss.detach())
                total_positions += int(mask_np.sum())

            train_loss = total_loss / max(1, total_positions)
            report = evaluate_model(
                model,
                data.split,
                data.P,
                split="valid",
                k=config.eval_k,
                num_negatives=config.eval_num_negatives,
                seed=config.seed,
            )
            row = {
                "epoch": epoch,
                "train_loss": train_loss,
                "valid_ndcg10": report.ndcg_at_k,
                "valid_hr10": report.hr_at_k,
            }
            history.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
                log_fh.flush()

            if report.ndcg_at_k > best_metric:
                best_metric = report.ndcg_at_k
                best_epoch = epoch
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(
        model=model,
        best_epoch=best_epoch,
        best_valid_ndcg=best_metric if best_metric != float("-inf") else 0.0,
        epochs_run=epochs_run,
        history=history,
    )


# -- checkpointing --------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: LaneModel,
    train_config: TrainConfig,
    result: TrainResult | None = None,
    extra: dict | None = None,
) -> None:
    """Binary archive (.pt) plus a JSON manifest next to it."""
    path = Path(path)
    payload = {
        "model_state": model.state_dict(),
        "model_config": model.config.to_dict(),
        "train_config": asdict(train_config),
        "best_epoch": result.best_epoch if result else None,
        "best_valid_ndcg": result.best_valid_ndcg if result else None,
        "history": result.history if result else [],
    }
    torch.save(payload, path)
    manifest = {
        "model_config": model.config.to_dict(),
        "train_config": asdict(train_config),
        "best_epoch": payload["best_epoch"],
        "best_valid_ndcg": payload["best_valid_ndcg"],
        "history": payload["history"],
    }
    if extra:
        manifest.update(extra)
    path.with_suffix(".json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[LaneModel, dict]:
    """Rebuild the model from a checkpoint; forward outputs match bit-for-bit."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    config = ModelConfig.from_dict(payload["model_config"])
    rows = payload["model_state"]["item_emb.weight"].shape[0]
    model = LaneModel(np.zeros((rows, config.dim), dtype=np.float32), config)
    model.load_state_dict(payload["model_state"])
    model.item_emb.weight.requires_grad = not config.freeze_item_embeddings
    model.eval()
    return model, payload
