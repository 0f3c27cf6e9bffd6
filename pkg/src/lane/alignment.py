"""Cross-attention alignment between sequence features and preference embeddings.

Sequence features act as queries; the m preference embeddings act as keys and
values. One block: multi-head scaled dot-product attention, a position-wise
feed-forward net, and two layer norms. The residual is added AFTER each layer
norm (att = LN(MH(Q,P,P)) + Q and F = LN(FFN(att)) + att) — unconventional but
deliberate, and pinned by the oracle tests.

The same trained query/key projections also yield the per-preference attention
weights omega: both projections are concatenated across heads and a single
softmax (scaled by sqrt(h*d_k)) runs over the m preferences — not a per-head
average. omega is the quantitative input to explanation generation.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from .errors import ConfigError


def scaled_dot_product_attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_k)) V, softmax row-wise over the keys."""
    d_k = K.shape[-1]
    scores = torch.matmul(Q, K.transpose(-1, -2)) / math.sqrt(d_k)
    return torch.matmul(torch.softmax(scores, dim=-1), V)


def layer_normalize(x: torch.Tensor, scale: torch.Tensor, bias: torch.Tensor, eps: float) -> torch.Tensor:
    """scale * (x - mean) / sqrt(var + eps) + bias over the feature axis (population variance)."""
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return scale * (x - mean) / torch.sqrt(var + eps) + bias


def position_wise_ffn(
    x: torch.Tensor,
    w1: torch.Tensor,
    b1: torch.Tensor,
    w2: torch.Tensor,
    b2: torch.Tensor,
    dropout: nn.Dropout | None = None,
) -> torch.Tensor:
    """ReLU(x W1 + b1) W2 + b2, applied row-wise."""
    hidden = torch.relu(x @ w1 + b1)
    if dropout is not None:
        hidden = dropout(hidden)
    return hidden @ w2 + b2


class AlignedFeatures(NamedTuple):
    F: torch.Tensor
    att: torch.Tensor


class AlignmentBlock(nn.Module):
    """One alignment block over (sequence features, preference embeddings).

    Head projections are per-head d x d_k matrices (d_k is free, not d/h);
    the output projection maps the h*d_k concatenation back to d.
    """

    def __init__(self, dim: int, heads: int, d_k: int, dropout: float = 0.0, eps: float = 1e-8):
        super().__init__()
        if heads < 1 or d_k < 1:
            raise ConfigError("heads and d_k must be positive")
        self.dim = dim
        self.heads = heads
        self.d_k = d_k
        self.eps = eps

        def head_stack():
            w = torch.empty(heads, dim, d_k)
            for i in range(heads):
                nn.init.xavier_uniform_(w[i])
            return nn.Parameter(w)

        self.w_q = head_stack()
        self.w_k = head_stack()
        self.w_v = head_stack()
        self.w_o = nn.Parameter(torch.empty(heads * d_k, dim))
        nn.init.xavier_uniform_(self.w_o)

        self.ffn_w1 = nn.Parameter(torch.empty(dim, dim))
        self.ffn_w2 = nn.Parameter(torch.empty(dim, dim))
        nn.init.xavier_uniform_(self.ffn_w1)
        nn.init.xavier_uniform_(self.ffn_w2)
        self.ffn_b1 = nn.Parameter(torch.zeros(dim))
        self.ffn_b2 = nn.Parameter(torch.zeros(dim))

        self.ln1_scale = nn.Parameter(torch.ones(dim))
        self.ln1_bias = nn.Parameter(torch.zeros(dim))
        self.ln2_scale = nn.Parameter(torch.ones(dim))
        self.ln2_bias = nn.Parameter(torch.zeros(dim))

        self.attn_dropout = nn.Dropout(dropout)
        self.ffn_dropout = nn.Dropout(dropout)

    def multi_head(self, Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor) -> torch.Tensor:
        """Concat(head_1..head_h) W_o with head_i = Attention(Q Wq_i, K Wk_i, V Wv_i)."""
        if Q.shape[-1] != self.dim or K.shape[-1] != self.dim or V.shape[-1] != self.dim:
            raise ConfigError(
                f"inputs must have feature dim {self.dim}, got {Q.shape[-1]}/{K.shape[-1]}/{V.shape[-1]}"
            )
        heads = []
        for i in range(self.heads):
            q_i = Q @ self.w_q[i]
            k_i = K @ self.w_k[i]
            v_i = V @ self.w_v[i]
            scores = torch.matmul(q_i, k_i.transpose(-1, -2)) / math.sqrt(self.d_k)
            weights = self.attn_dropout(torch.softmax(scores, dim=-1))
            heads.append(torch.matmul(weights, v_i))
        return torch.cat(heads, dim=-1) @ self.w_o

    def forward(self, Q: torch.Tensor, P: torch.Tensor) -> AlignedFeatures:
        """att = LN(Multihead(Q, P, P)) + Q; F = LN(FFN(att)) + att."""
        att = layer_normalize(self.multi_head(Q, P, P), self.ln1_scale, self.ln1_bias, self.eps) + Q
        fnn = position_wise_ffn(att, self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2, self.ffn_dropout)
        F = layer_normalize(fnn, self.ln2_scale, self.ln2_bias, self.eps) + att
        return AlignedFeatures(F=F, att=att)

    def preference_weights(self, q_n: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
        """Single softmax over the h*d_k concatenation of query/key projections.

        q_n: (..., d) last-position sequence feature; P: (..., m, d).
        Returns omega with shape (..., m); rows are nonnegative and sum to 1.
        """
        q_cat = torch.cat([q_n @ self.w_q[i] for i in range(self.heads)], dim=-1)
        k_cat = torch.cat([P @ self.w_k[i] for i in range(self.heads)], dim=-1)
        scores = (k_cat @ q_cat.unsqueeze(-1)).squeeze(-1) / math.sqrt(self.heads * self.d_k)
        return torch.softmax(scores, dim=-1)

    def export_params(self) -> dict[str, np.ndarray | float]:
        """Plain numpy copies of every parameter, for independent recomputation."""
        out: dict[str, np.ndarray | float] = {
            name: tensor.detach().cpu().numpy().copy()
            for name, tensor in self.named_parameters()
        }
        out["eps"] = self.eps
        return out
