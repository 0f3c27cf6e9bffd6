"""Black-box sequence encoders with the prediction head removed.

The backbone adds a learnable positional table to looked-up title embeddings
and encodes the padded sequence into one feature vector per position. Two
variants ship: a causal self-attention encoder (transformer blocks in the
style of the classic self-attentive recommender) and a gated-recurrent
encoder. Both guarantee that pad positions never leak into the features of
valid positions: attention masks pads out as keys, and the recurrence carries
its hidden state unchanged across pads.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError, NumericError

VARIANTS = ("self_attention", "gated_recurrent")


def embed_with_positions(
    indices: torch.Tensor, item_emb: nn.Embedding, positional_table: torch.Tensor
) -> torch.Tensor:
    """Lookup plus positional add: E_t = M[index_t] + PE_t (pads get 0 + PE_t)."""
    if indices.dim() == 1:
        indices = indices.unsqueeze(0)
    n = indices.shape[-1]
    if positional_table.shape[0] != n:
        raise ConfigError(
            f"sequence length {n} does not match positional table rows {positional_table.shape[0]}"
        )
    if item_emb.embedding_dim != positional_table.shape[1]:
        raise ConfigError(
            f"embedding dim {item_emb.embedding_dim} does not match positional dim {positional_table.shape[1]}"
        )
    return item_emb(indices) + positional_table


class CausalMultiheadSelfAttention(nn.Module):
    """Multi-head self-attention with additive -inf causal masking.

    Pad positions are masked out as keys; the diagonal stays unmasked so every
    query row keeps at least one finite score.
    """

    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        if dim % heads != 0:
            raise ConfigError(f"backbone dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_size = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)
        for lin in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            nn.init.xavier_uniform_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, queries: torch.Tensor, keys: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        b, n, _ = queries.shape
        q = self.q_proj(queries).view(b, n, self.heads, self.head_size).transpose(1, 2)
        k = self.k_proj(keys).view(b, n, self.heads, self.head_size).transpose(1, 2)
        v = self.v_proj(keys).view(b, n, self.heads, self.head_size).transpose(1, 2)

        scores = torch.matmul(q, k.transpose(-1, -2)) / (self.head_size**0.5)
        causal = torch.tril(torch.ones(n, n, dtype=torch.bool, device=queries.device))
        allowed = causal.unsqueeze(0) & valid_mask[:, None, :]
        allowed = allowed | torch.eye(n, dtype=torch.bool, device=queries.device).unsqueeze(0)
        scores = scores.masked_fill(~allowed.unsqueeze(1), float("-inf"))

        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = torch.matmul(weights, v).transpose(1, 2).reshape(b, n, self.dim)
        return self.out_proj(out)


class PointwiseFeedForward(nn.Module):
    def __init__(self, dim: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(dim, dim)
        self.lin2 = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.dropout(torch.relu(self.lin1(x))))


class SelfAttentionEncoder(nn.Module):
    """Stack of pre-norm causal attention blocks, feature output only."""

    def __init__(self, dim: int, blocks: int, heads: int, dropout: float):
        super().__init__()
        self.attn_norms = nn.ModuleList(nn.LayerNorm(dim, eps=1e-8) for _ in range(blocks))
        self.attns = nn.ModuleList(CausalMultiheadSelfAttention(dim, heads, dropout) for _ in range(blocks))
        self.ffn_norms = nn.ModuleList(nn.LayerNorm(dim, eps=1e-8) for _ in range(blocks))
        self.ffns = nn.ModuleList(PointwiseFeedForward(dim, dropout) for _ in range(blocks))
        self.last_norm = nn.LayerNorm(dim, eps=1e-8)
        self.input_dropout = nn.Dropout(dropout)

    def forward(self, E: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        x = self.input_dropout(E)
        for i, (norm_a, attn, norm_f, ffn) in enumerate(
            zip(self.attn_norms, self.attns, self.ffn_norms, self.ffns)
        ):
            q = norm_a(x)
            x = q + attn(q, x, valid_mask)
            x = norm_f(x)
            x = x + ffn(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after self-attention block {i}")
        return self.last_norm(x)


class GatedRecurrentEncoder(nn.Module):
    """GRU cells run position by position; hidden state is held across pads."""

    def __init__(self, dim: int, blocks: int, dropout: float):
        super().__init__()
        self.cells = nn.ModuleList(nn.GRUCell(dim, dim) for _ in range(blocks))
        self.input_dropout = nn.Dropout(dropout)
        self.layer_dropout = nn.Dropout(dropout)

    def forward(self, E: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        b, n, d = E.shape
        x = self.input_dropout(E)
        for layer, cell in enumerate(self.cells):
            h = x.new_zeros(b, d)
            outputs = []
            for t in range(n):
                step = cell(x[:, t, :], h)
                keep = valid_mask[:, t].unsqueeze(-1).to(step.dtype)
                h = keep * step + (1.0 - keep) * h
                outputs.append(h)
            x = torch.stack(outputs, dim=1)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after recurrent layer {layer}")
            if layer + 1 < len(self.cells):
                x = self.layer_dropout(x)
        return x


class SequenceBackbone(nn.Module):
    """Positional table plus one of the encoder variants."""

    def __init__(self, n: int, dim: int, variant: str = "self_attention", blocks: int = 2, heads: int = 1, dropout: float = 0.0):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown backbone variant {variant!r} (expected one of {VARIANTS})")
        self.n = n
        self.dim = dim
        self.variant = variant
        self.positional_table = nn.Parameter(torch.empty(n, dim))
        nn.init.normal_(self.positional_table, std=0.02)
        if variant == "self_attention":
            self.encoder = SelfAttentionEncoder(dim, blocks, heads, dropout)
        else:
            self.encoder = GatedRecurrentEncoder(dim, blocks, dropout)

    def forward(self, indices: torch.Tensor, item_emb: nn.Embedding, valid_mask: torch.Tensor) -> torch.Tensor:
        E = embed_with_positions(indices, item_emb, self.positional_table)
        return self.encode(E, valid_mask)

    def encode(self, E: torch.Tensor, valid_mask: torch.Tensor) -> torch.Tensor:
        if E.dim() == 2:
            E = E.unsqueeze(0)
        if valid_mask.dim() == 1:
            valid_mask = valid_mask.unsqueeze(0)
        if E.shape[-1] != self.dim or E.shape[-2] != self.n:
            raise ConfigError(f"expected input of shape (*, {self.n}, {self.dim}), got {tuple(E.shape)}")
        Q = self.encoder(E, valid_mask)
        if not torch.isfinite(Q).all():
            raise NumericError("non-finite sequence features at encoder output")
        return Q
