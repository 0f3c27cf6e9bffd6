"""Ranking evaluation: sampled-candidate protocol with HR@k and NDCG@k.

For each user with a held-out target, the target is ranked against sampled
negatives (100 by default) drawn uniformly without replacement from the items
the user never interacted with. Rank counts strictly-greater scores only, so
ties favor the target — stated explicitly because dot-product ties do occur
with frozen mock encoders. Candidate draws are deterministic given
(seed, split, user id).
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import SplitDataset, UserSplit, build_fixed_sequence
from .errors import ProtocolError
from .model import LaneModel


@dataclass(frozen=True)
class EvalCandidates:
    target: int
    negatives: tuple[int, ...]


@dataclass
class MetricsReport:
    hr_at_k: float
    ndcg_at_k: float
    k: int
    user_count: int
    skipped: int = 0
    defined: bool = True
    per_user: list[dict] | None = None

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "hr_at_k": self.hr_at_k,
            "ndcg_at_k": self.ndcg_at_k,
            "user_count": self.user_count,
            "skipped": self.skipped,
            "defined": self.defined,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def user_rng(seed: int, split: str, user_id: str) -> np.random.Generator:
    """Generator that depends only on (seed, split, user id)."""
    return np.random.default_rng([seed, zlib.crc32(split.encode()), zlib.crc32(user_id.encode())])


def build_eval_candidates(
    user: UserSplit,
    split: str,
    item_count: int,
    rng: np.random.Generator,
    num_negatives: int = 100,
) -> EvalCandidates:
    """Sample distinct negatives excluding the user's items and the target."""
    target = user.valid if split == "valid" else user.test
    if target is None:
        raise ProtocolError(f"user has no {split} target")
    owned = set(user.all_items())
    eligible = np.array([i for i in range(1, item_count + 1) if i not in owned and i != target])
    if len(eligible) < num_negatives:
        raise ProtocolError(
            f"only {len(eligible)} eligible negatives for a user needing {num_negatives} "
            f"(catalog size {item_count})"
        )
    negatives = rng.choice(eligible, size=num_negatives, replace=False)
    return EvalCandidates(target=target, negatives=tuple(int(i) for i in negatives))


def rank_of_target(scores: dict[int, float], target: int) -> int:
    """1-based rank counting only candidates that strictly beat the target."""
    target_score = scores[target]
    return 1 + sum(1 for idx, s in scores.items() if idx != target and s > target_score)


def compute_metrics(ranks: list[int], k: int) -> MetricsReport:
    """HR@k = mean(rank <= k); NDCG@k = mean(1/log2(rank+1) when within k).

    Sums use math.fsum so the aggregates are correctly rounded regardless of
    user order.
    """
    if not ranks:
        return MetricsReport(hr_at_k=0.0, ndcg_at_k=0.0, k=k, user_count=0, defined=False)
    hits = [1.0 if r <= k else 0.0 for r in ranks]
    gains = [1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks]
    return MetricsReport(
        hr_at_k=math.fsum(hits) / len(ranks),
        ndcg_at_k=math.fsum(gains) / len(ranks),
        k=k,
        user_count=len(ranks),
    )


def evaluate_model(
    model: LaneModel,
    split_data: SplitDataset,
    P: dict[str, np.ndarray],
    split: str = "valid",
    k: int = 10,
    num_negatives: int = 100,
    seed: int = 0,
    batch_size: int = 256,
    keep_per_user: bool = False,
) -> MetricsReport:
    """Rank each eligible user's held-out target against sampled negatives.

    The scored prefix is the full observed history before the target: the
    training items for the validation split, training plus validation item for
    the test split. Users without cached preferences are skipped and counted.
    """
    if split not in ("valid", "test"):
        raise ValueError(f"split must be 'valid' or 'test', got {split!r}")
    n = model.config.n
    item_count = model.num_items
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype

    rows = []  # (user_id, prefix, candidates)
    skipped = 0
    for user_id, user in split_data.users.items():
        target = user.valid if split == "valid" else user.test
        if target is None:
            continue
        if model.alignment is not None and user_id not in P:
            skipped += 1
            continue
        prefix = list(user.train) if split == "valid" else list(user.train) + [user.valid]
        if not prefix:
            skipped += 1
            continue
        cands = build_eval_candidates(
            user, split, item_count, user_rng(seed, split, user_id), num_negatives
        )
        rows.append((user_id, prefix, cands))

    ranks: list[int] = []
    per_user: list[dict] = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for start in range(0, len(rows), batch_size):
            chunk = rows[start : start + batch_size]
            seqs, masks, cand_idx, p_stack = [], [], [], []
            for user_id, prefix, cands in chunk:
                padded = build_fixed_sequence(prefix, n)
                seqs.append(padded.indices)
                masks.append(padded.valid_mask)
                cand_idx.append([cands.target, *cands.negatives])
                if model.alignment is not None:
                    p_stack.append(P[user_id])
            indices = torch.from_numpy(np.stack(seqs)).to(device)
            valid = torch.from_numpy(np.stack(masks)).to(device)
            p_tensor = (
                torch.from_numpy(np.stack(p_stack)).to(device=device, dtype=dtype)
                if p_stack
                else None
            )
            features = model.last_feature(indices, valid, p_tensor)
            scores = model.score_items(features, torch.tensor(cand_idx, device=device))
            scores_np = scores.detach().cpu().numpy()
            for row, (user_id, _, cands) in enumerate(chunk):
                mapping = dict(zip([cands.target, *cands.negatives], scores_np[row].tolist()))
                rank = rank_of_target(mapping, cands.target)
                ranks.append(rank)
                if keep_per_user:
                    per_user.append({"user_id": user_id, "rank": rank})
    if was_training:
        model.train()

    report = compute_metrics(ranks, k)
    report.skipped = skipped
    if keep_per_user:
        report.per_user = per_user
    return report
