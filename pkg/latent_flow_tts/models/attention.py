import math
from typing import Optional

import torch
from torch import nn


class RotaryEmbedding(nn.Module):
    """Rotates consecutive (even, odd) feature pairs of queries/keys by position-dependent angles."""

    def __init__(self, head_dim: int, base: float = 10000.0):
        super().__init__()
        if head_dim % 2 != 0:
            raise ValueError(f"{head_dim=} should be even")
        self.head_dim = head_dim
        self.base = base

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        :param x: tensor of shape (B, H, L, head_dim)
        """
        positions = torch.arange(x.shape[-2], device=x.device, dtype=x.dtype)
        freqs = 1.0 / (
            self.base
            ** (torch.arange(0, self.head_dim, 2, device=x.device, dtype=x.dtype) / self.head_dim)
        )
        angles = positions.unsqueeze(-1) * freqs
        cos, sin = torch.cos(angles), torch.sin(angles)

        x_even, x_odd = x[..., ::2], x[..., 1::2]
        rotated = torch.stack([x_even * cos - x_odd * sin, x_even * sin + x_odd * cos], dim=-1)
        return rotated.flatten(-2)


class DotProductAttention(nn.Module):
    """Parameter-free scaled dot-product attention core over (B, H, L, d) tensors."""

    def forward(
        self,
        q: torch.Tensor,
        k: torch.Tensor,
        v: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        return torch.matmul(torch.softmax(scores, dim=-1), v)


class MultiHeadAttention(nn.Module):
    """
    Multi-head attention with separate query and key/value input widths.
    With out_proj=False the heads are only concatenated (query, key and value linears only).
    """

    def __init__(
        self,
        query_dim: int,
        kv_dim: int,
        attn_dim: int,
        heads: int,
        out_dim: Optional[int] = None,
        out_proj: bool = True,
        rotary: Optional[RotaryEmbedding] = None,
    ):
        super().__init__()
        if attn_dim % heads != 0:
            raise ValueError(f"{attn_dim=} should be divisible by {heads=}")

        self.heads = heads
        self.attn_dim = attn_dim
        self.q = nn.Linear(query_dim, attn_dim)
        self.k = nn.Linear(kv_dim, attn_dim)
        self.v = nn.Linear(kv_dim, attn_dim)
        self.rotary = rotary
        self.attention = DotProductAttention()
        if out_proj:
            self.out = nn.Linear(attn_dim, query_dim if out_dim is None else out_dim)
        elif out_dim not in (None, attn_dim):
            raise ValueError(f"{out_dim=} requires an output projection")
        else:
            self.out = None

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, -1).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        context: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
        value_context: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """
        :param query: tensor of shape (B, L_q, query_dim)
        :param context: tensor of shape (B, L_k, kv_dim), source of keys (and values)
        :param key_mask: optional boolean (B, L_k), True at valid keys
        :param value_context: optional (B, L_k, kv_dim) source of values when it differs from the keys
        :return: tensor of shape (B, L_q, out_dim)
        """
        value_context = context if value_context is None else value_context
        q = self._split(self.q(query))
        k = self._split(self.k(context))
        v = self._split(self.v(value_context))
        if self.rotary is not None:
            q, k = self.rotary(q), self.rotary(k)

        x = self.attention(q, k, v, key_mask)
        x = x.transpose(1, 2).reshape(query.shape[0], query.shape[1], self.attn_dim)
        return x if self.out is None else self.out(x)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with rotary positions and a GELU feed-forward."""

    def __init__(self, dim: int, filter_dim: int, heads: int, rope_base: float = 10000.0):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(
            dim, dim, dim, heads, rotary=RotaryEmbedding(dim // heads, rope_base)
        )
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, filter_dim), nn.GELU(), nn.Linear(filter_dim, dim)
        )

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        :param x: tensor of shape (B, L, dim)
        :param mask: optional boolean (B, L), True at valid positions
        """
        h = self.attn_norm(x)
        x = x + self.attn(h, h, mask)
        x = x + self.ffn(self.ffn_norm(x))
        if mask is not None:
            x = x * mask.unsqueeze(-1)
        return x


class CrossAttentionLayer(nn.Module):
    """Residual cross-attention: queries attend to a context sequence."""

    def __init__(
        self,
        query_dim: int,
        kv_dim: int,
        heads: int,
        attn_dim: Optional[int] = None,
        out_proj: bool = False,
    ):
        super().__init__()
        self.norm = nn.LayerNorm(query_dim)
        self.attn = MultiHeadAttention(
            query_dim,
            kv_dim,
            query_dim if attn_dim is None else attn_dim,
            heads,
            out_proj=out_proj,
        )

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
        query_mask: Optional[torch.Tensor] = None,
        value_context: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        x = x + self.attn(self.norm(x), context, key_mask, value_context)
        if query_mask is not None:
            x = x * query_mask.unsqueeze(-1)
        return x
