"""The assembled recommender.

Wires together the item-title embedding layer, the sequence backbone, and the
alignment block. The embedding layer is initialized from the encoded title
matrix (never randomly); row 0 is the pad row and stays zero because it is the
embedding's padding index. Candidate scores are plain dot products between an
aligned feature vector and candidate embedding rows, so candidates are always
scored against the same (possibly further-trained) title matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .alignment import AlignmentBlock
from .backbone import SequenceBackbone
from .errors import ConfigError


@dataclass
class ModelConfig:
    n: int = 50
    dim: int = 384
    backbone_variant: str = "self_attention"
    backbone_blocks: int = 2
    backbone_heads: int = 1
    align_heads: int = 4
    align_dk: int = 384
    dropout: float = 0.5
    freeze_item_embeddings: bool = False
    use_alignment: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def score_candidate(f: torch.Tensor, m_i: torch.Tensor) -> torch.Tensor:
    """Prediction score of one candidate: the dot product f . m_i."""
    if f.shape[-1] != m_i.shape[-1]:
        raise ConfigError(f"feature dim {f.shape[-1]} != candidate dim {m_i.shape[-1]}")
    return (f * m_i).sum(dim=-1)


class LaneModel(nn.Module):
    def __init__(self, M: np.ndarray, config: ModelConfig):
        super().__init__()
        if M.ndim != 2 or M.shape[1] != config.dim:
            raise ConfigError(f"title matrix shape {M.shape} does not match dim {config.dim}")
        self.config = config
        self.num_items = M.shape[0] - 1

        self.item_emb = nn.Embedding(M.shape[0], config.dim, padding_idx=0)
        with torch.no_grad():
            self.item_emb.weight.copy_(torch.from_numpy(np.ascontiguousarray(M, dtype=np.float32)))
        self.item_emb.weight.requires_grad = not config.freeze_item_embeddings

        self.backbone = SequenceBackbone(
            n=config.n,
            dim=config.dim,
            variant=config.backbone_variant,
            blocks=config.backbone_blocks,
            heads=config.backbone_heads,
            dropout=config.dropout,
        )
        self.alignment = (
            AlignmentBlock(config.dim, config.align_heads, config.align_dk, dropout=config.dropout)
            if config.use_alignment
            else None
        )

    def sequence_features(self, indices: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        """Per-position feature matrix from the backbone (no alignment)."""
        return self.backbone(indices, self.item_emb, valid_mask)

    def forward(
        self, indices: torch.Tensor, valid_mask: torch.Tensor, P: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Aligned per-position features; falls back to raw features without alignment."""
        Q = self.sequence_features(indices, valid_mask)
        if self.alignment is None:
            return Q
        if P is None:
            raise ConfigError("alignment is enabled but no preference embeddings were given")
        return self.alignment(Q, P).F

    def last_feature(
        self, indices: torch.Tensor, valid_mask: torch.Tensor, P: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Feature of the full sequence: the last position (most recent item)."""
        return self.forward(indices, valid_mask, P)[:, -1, :]

    def preference_weights(
        self, indices: torch.Tensor, valid_mask: torch.Tensor, P: torch.Tensor
    ) -> torch.Tensor:
        """omega over the m preferences, from the last position's raw feature."""
        if self.alignment is None:
            raise ConfigError("preference weights need the alignment block")
        q_n = self.sequence_features(indices, valid_mask)[:, -1, :]
        return self.alignment.preference_weights(q_n, P)

    def score_items(self, features: torch.Tensor, item_indices: torch.Tensor) -> torch.Tensor:
        """Dot-product scores of candidate items against feature vectors.

        features: (B, d); item_indices: (B, C) -> scores (B, C).
        """
        cand = self.item_emb(item_indices)
        return torch.einsum("bd,bcd->bc", features, cand)
