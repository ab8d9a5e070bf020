import math
from dataclasses import dataclass
from typing import Optional, Union

import torch
from torch import nn

from latent_flow_tts.config import ModelConfig
from latent_flow_tts.errors import EmptyInputError
from latent_flow_tts.latent_ops import CompressedLatent
from latent_flow_tts.models.attention import CrossAttentionLayer, TransformerBlock
from latent_flow_tts.models.convnext import ConvNeXtBlock
from latent_flow_tts.text import CharacterSequence, default_vocab


@dataclass
class ReferenceSummary:
    """Fixed-size reference encoding: shared learnable keys and per-item values, (B, N, D) each."""

    keys: torch.Tensor
    values: torch.Tensor


@dataclass
class Conditions:
    """
    Encoded conditions of a batch: text states (B, L, D) with their boolean mask (B, L)
    and the reference keys/values (B, N, D).
    """

    text: torch.Tensor
    text_mask: torch.Tensor
    ref_keys: torch.Tensor
    ref_values: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.text.shape[0]

    def index_select(self, index: torch.Tensor) -> "Conditions":
        return Conditions(
            text=self.text[index],
            text_mask=self.text_mask[index],
            ref_keys=self.ref_keys[index],
            ref_values=self.ref_values[index],
        )


def time_embedding(t: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    """
    Sinusoidal embedding of flow times t in [0, 1].

    :param t: tensor of shape (B,)
    :return: tensor of shape (B, dim)
    """
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, device=t.device, dtype=t.dtype) * -(math.log(10000.0) / (half - 1))
    )
    angles = scale * t.unsqueeze(-1) * freqs
    return torch.cat([angles.sin(), angles.cos()], dim=-1)


def _conv_mask(mask: Optional[torch.Tensor], like: torch.Tensor) -> Optional[torch.Tensor]:
    return None if mask is None else mask.unsqueeze(1).to(like.dtype)


class ReferenceEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ttl = cfg.ttl
        dim = ttl.cond_dim

        self.in_proj = nn.Linear(cfg.compressed_channels, dim)
        self.blocks = nn.ModuleList(
            [
                ConvNeXtBlock(dim, ttl.ref_intermediate, ttl.ref_kernel, init_std=ttl.init_std)
                for _ in range(ttl.ref_blocks)
            ]
        )
        self.queries = nn.Parameter(torch.empty(ttl.n_ref_tokens, dim))
        nn.init.trunc_normal_(self.queries, std=ttl.init_std)
        self.attn = nn.ModuleList(
            [CrossAttentionLayer(dim, dim, ttl.ref_heads) for _ in range(2)]
        )

    def forward(self, ref: torch.Tensor, ref_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        :param ref: compressed reference latents (B, K_c*C, T_ref)
        :param ref_mask: optional boolean (B, T_ref), True at valid frames
        :return: reference values (B, n_ref_tokens, D)
        """
        x = self.in_proj(ref.transpose(1, 2)).transpose(1, 2)
        mask = _conv_mask(ref_mask, x)
        for block in self.blocks:
            x = block(x, mask)
        frames = x.transpose(1, 2)

        h = self.queries.unsqueeze(0).expand(ref.shape[0], -1, -1)
        for layer in self.attn:
            h = layer(h, frames, key_mask=ref_mask)
        return h


class TextEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        ttl = cfg.ttl
        dim = ttl.cond_dim

        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=0)
        self.blocks = nn.ModuleList(
            [
                ConvNeXtBlock(dim, ttl.text_intermediate, ttl.text_kernel, init_std=ttl.init_std)
                for _ in range(ttl.text_blocks)
            ]
        )
        self.attn_blocks = nn.ModuleList(
            [
                TransformerBlock(dim, ttl.text_attn_filter, ttl.text_heads, ttl.rope_base)
                for _ in range(ttl.text_attn_blocks)
            ]
        )
        self.ref_attn = nn.ModuleList(
            [CrossAttentionLayer(dim, dim, ttl.text_heads) for _ in range(2)]
        )

    def forward(
        self, char_ids: torch.Tensor, char_mask: torch.Tensor, summary: ReferenceSummary
    ) -> torch.Tensor:
        """
        :param char_ids: (B, L) character ids
        :param char_mask: boolean (B, L), True at characters
        :return: speaker-adaptive text states (B, L, D), zero at padding
        """
        x = self.embedding(char_ids).transpose(1, 2)
        mask = _conv_mask(char_mask, x)
        for block in self.blocks:
            x = block(x, mask)

        x = x.transpose(1, 2)
        for block in self.attn_blocks:
            x = block(x, char_mask)
        for layer in self.ref_attn:
            x = layer(x, summary.keys, query_mask=char_mask, value_context=summary.values)
        return x


class TimeCondBlock(nn.Module):
    """Adds a projected time embedding to every frame."""

    def __init__(self, time_dim: int, dim: int):
        super().__init__()
        self.proj = nn.Linear(time_dim, dim)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        return x + self.proj(t_emb).unsqueeze(-1)


class CondBlock(nn.Module):
    """Cross-attention from latent frames (B, C, T) to a condition sequence."""

    def __init__(self, dim: int, cond_dim: int, heads: int):
        super().__init__()
        self.attn = CrossAttentionLayer(dim, cond_dim, heads, out_proj=True)

    def forward(
        self,
        x: torch.Tensor,
        keys: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
        values: Optional[torch.Tensor] = None,
        frame_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        h = self.attn(x.transpose(1, 2), keys, key_mask, frame_mask, values)
        return h.transpose(1, 2)


class MainBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ttl = cfg.ttl
        dim = ttl.vf_dim

        self.dilated = nn.ModuleList(
            [
                ConvNeXtBlock(dim, ttl.vf_intermediate, ttl.vf_kernel, dilation=d, init_std=ttl.init_std)
                for d in ttl.vf_dilations
            ]
        )
        self.standard = nn.ModuleList(
            [
                ConvNeXtBlock(dim, ttl.vf_intermediate, ttl.vf_kernel, init_std=ttl.init_std)
                for _ in range(ttl.vf_standard_blocks)
            ]
        )
        self.time_cond = TimeCondBlock(ttl.time_embed_dim, dim)
        self.text_cond = CondBlock(dim, ttl.cond_dim, ttl.vf_heads)
        self.ref_cond = CondBlock(dim, ttl.cond_dim, ttl.vf_heads)

    def forward(
        self,
        x: torch.Tensor,
        t_emb: torch.Tensor,
        conditions: Conditions,
        latent_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        mask = _conv_mask(latent_mask, x)
        for block in self.dilated:
            x = block(x, mask)
        for block in self.standard:
            x = block(x, mask)
        x = self.time_cond(x, t_emb)
        x = self.text_cond(x, conditions.text, conditions.text_mask, frame_mask=latent_mask)
        x = self.ref_cond(
            x, conditions.ref_keys, values=conditions.ref_values, frame_mask=latent_mask
        )
        return x


class VectorFieldEstimator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ttl = cfg.ttl
        self.channels = cfg.compressed_channels
        self.time_embed_dim = ttl.time_embed_dim

        self.in_proj = nn.Linear(self.channels, ttl.vf_dim)
        self.main = nn.ModuleList([MainBlock(cfg) for _ in range(ttl.vf_main_repeats)])
        self.tail = nn.ModuleList(
            [
                ConvNeXtBlock(ttl.vf_dim, ttl.vf_intermediate, ttl.vf_kernel, init_std=ttl.init_std)
                for _ in range(ttl.vf_tail_blocks)
            ]
        )
        self.out_proj = nn.Linear(ttl.vf_dim, self.channels)

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        conditions: Conditions,
        latent_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        x = self.in_proj(z_t.transpose(1, 2)).transpose(1, 2)
        t_emb = time_embedding(t, self.time_embed_dim)
        for block in self.main:
            x = block(x, t_emb, conditions, latent_mask)

        mask = _conv_mask(latent_mask, x)
        for block in self.tail:
            x = block(x, mask)
        out = self.out_proj(x.transpose(1, 2)).transpose(1, 2)
        return out if mask is None else out * mask


class TextToLatent(nn.Module):
    """
    Reference encoder, text encoder and vector-field estimator with the learnable
    reference keys shared between text encoder and estimator, plus the learnable
    null conditions of the unconditional mode.
    """

    def __init__(self, cfg: ModelConfig, vocab_size: Optional[int] = None):
        super().__init__()
        ttl = cfg.ttl
        self.cfg = cfg
        vocab_size = len(default_vocab()) if vocab_size is None else vocab_size

        self.ref_keys = nn.Parameter(torch.empty(ttl.n_ref_tokens, ttl.cond_dim))
        self.null_text = nn.Parameter(torch.empty(ttl.n_null_text, ttl.cond_dim))
        self.null_ref_values = nn.Parameter(torch.empty(ttl.n_ref_tokens, ttl.cond_dim))
        for p in (self.ref_keys, self.null_text, self.null_ref_values):
            nn.init.normal_(p, std=1.0)

        self.reference_encoder = ReferenceEncoder(cfg)
        self.text_encoder = TextEncoder(cfg, vocab_size)
        self.vector_field = VectorFieldEstimator(cfg)

        self.condition_encoder_calls = 0

    def _keys(self, batch_size: int) -> torch.Tensor:
        return self.ref_keys.unsqueeze(0).expand(batch_size, -1, -1)

    def encode_reference(
        self,
        ref: Union[CompressedLatent, torch.Tensor],
        ref_mask: Optional[torch.Tensor] = None,
    ) -> ReferenceSummary:
        if isinstance(ref, CompressedLatent):
            ref = ref.values.unsqueeze(0)
        if ref.shape[-1] == 0 or (
            ref_mask is not None and not ref_mask.is_meta and not ref_mask.any(dim=1).all()
        ):
            raise EmptyInputError("reference latent has no frames")
        if ref.shape[1] != self.cfg.compressed_channels:
            raise ValueError(
                f"reference has {ref.shape[1]} channels, expected {self.cfg.compressed_channels}"
            )

        values = self.reference_encoder(ref, ref_mask)
        return ReferenceSummary(keys=self._keys(ref.shape[0]), values=values)

    def encode_text(
        self,
        chars: Union[CharacterSequence, torch.Tensor],
        summary: ReferenceSummary,
        char_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        if isinstance(chars, CharacterSequence):
            chars = chars.to_tensor().unsqueeze(0).to(summary.values.device)
        if char_mask is None:
            char_mask = torch.ones_like(chars, dtype=torch.bool)
        if chars.shape[-1] == 0 or (not char_mask.is_meta and not char_mask.any(dim=1).all()):
            raise EmptyInputError("text has no characters")

        return self.text_encoder(chars, char_mask, summary)

    def encode_conditions(
        self,
        char_ids: torch.Tensor,
        char_mask: torch.Tensor,
        ref: torch.Tensor,
        ref_mask: Optional[torch.Tensor] = None,
    ) -> Conditions:
        """The single condition-encoding entry point; counts encoded items."""
        summary = self.encode_reference(ref, ref_mask)
        text = self.encode_text(char_ids, summary, char_mask)
        self.condition_encoder_calls += char_ids.shape[0]
        return Conditions(
            text=text, text_mask=char_mask, ref_keys=summary.keys, ref_values=summary.values
        )

    def null_conditions(self, batch_size: int = 1) -> Conditions:
        return Conditions(
            text=self.null_text.unsqueeze(0).expand(batch_size, -1, -1),
            text_mask=torch.ones(
                batch_size, self.null_text.shape[0], dtype=torch.bool, device=self.null_text.device
            ),
            ref_keys=self._keys(batch_size),
            ref_values=self.null_ref_values.unsqueeze(0).expand(batch_size, -1, -1),
        )

    def estimate_vector_field(
        self,
        z_t: torch.Tensor,
        t: Union[float, torch.Tensor],
        conditions: Conditions,
        latent_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """
        :param z_t: noisy compressed latents (B, K_c*C, T)
        :param t: flow time, scalar or (B,)
        :param latent_mask: optional boolean (B, T), True at valid frames
        :return: vector field of the shape of z_t
        """
        if z_t.dim() != 3 or z_t.shape[1] != self.cfg.compressed_channels:
            raise ValueError(
                f"{tuple(z_t.shape)=} should be (B, {self.cfg.compressed_channels}, T)"
            )
        if conditions.batch_size != z_t.shape[0]:
            raise ValueError(f"{conditions.batch_size=} does not match batch {z_t.shape[0]}")

        t = torch.as_tensor(t, dtype=z_t.dtype, device=z_t.device)
        if t.dim() == 0:
            t = t.expand(z_t.shape[0])
        if t.shape != (z_t.shape[0],):
            raise ValueError(f"{tuple(t.shape)=} should be ({z_t.shape[0]},)")
        if not t.is_meta and ((t < 0) | (t > 1)).any():
            raise ValueError("flow time t should lie in [0, 1]")

        return self.vector_field(z_t, t, conditions, latent_mask)

    forward = estimate_vector_field
