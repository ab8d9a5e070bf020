from typing import Optional, Union

import torch
import torch.nn.functional as F
from pytorch_lightning.utilities import rank_zero_info
from torch import nn

from latent_flow_tts.config import ModelConfig
from latent_flow_tts.errors import EmptyInputError
from latent_flow_tts.latent_ops import CompressedLatent
from latent_flow_tts.models.attention import CrossAttentionLayer, MultiHeadAttention, TransformerBlock
from latent_flow_tts.models.convnext import ConvNeXtBlock
from latent_flow_tts.text import CharacterSequence, default_vocab


class DurationReferenceEncoder(nn.Module):
    """
    Summarizes a reference latent into n_queries * query_out values: learnable queries
    attend to the encoded frames at a narrow attention width.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dp = cfg.duration

        self.in_proj = nn.Linear(cfg.compressed_channels, dp.dim)
        self.blocks = nn.ModuleList(
            [ConvNeXtBlock(dp.dim, dp.ref_intermediate, dp.ref_kernel) for _ in range(dp.ref_blocks)]
        )
        self.queries = nn.Parameter(torch.empty(dp.n_queries, dp.dim))
        nn.init.trunc_normal_(self.queries, std=0.02)

        self.query_norm = nn.LayerNorm(dp.dim)
        self.attn1 = MultiHeadAttention(dp.dim, dp.dim, dp.attn_dim, dp.heads, out_proj=False)
        self.attn2 = CrossAttentionLayer(dp.attn_dim, dp.dim, dp.heads)
        self.out = nn.Linear(dp.attn_dim, dp.query_out)

    @property
    def out_dim(self) -> int:
        return self.queries.shape[0] * self.out.out_features

    def forward(self, ref: torch.Tensor, ref_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = self.in_proj(ref.transpose(1, 2)).transpose(1, 2)
        mask = None if ref_mask is None else ref_mask.unsqueeze(1).to(x.dtype)
        for block in self.blocks:
            x = block(x, mask)
        frames = x.transpose(1, 2)

        q = self.query_norm(self.queries).unsqueeze(0).expand(ref.shape[0], -1, -1)
        h = self.attn1(q, frames, ref_mask)
        h = self.attn2(h, frames, key_mask=ref_mask)
        return self.out(h).flatten(1)


class DurationTextEncoder(nn.Module):
    """Character encoder whose prepended utterance token summarizes the whole text."""

    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        dp = cfg.duration

        self.embedding = nn.Embedding(vocab_size, dp.dim, padding_idx=0)
        self.blocks = nn.ModuleList(
            [ConvNeXtBlock(dp.dim, dp.text_intermediate, dp.text_kernel) for _ in range(dp.text_blocks)]
        )
        self.utterance_token = nn.Parameter(torch.empty(dp.dim))
        nn.init.normal_(self.utterance_token, std=0.02)
        self.attn_blocks = nn.ModuleList(
            [TransformerBlock(dp.dim, dp.attn_filter, dp.heads) for _ in range(dp.attn_blocks)]
        )
        self.out = nn.Linear(dp.dim, dp.dim)

    def forward(self, char_ids: torch.Tensor, char_mask: torch.Tensor) -> torch.Tensor:
        x = self.embedding(char_ids).transpose(1, 2)
        mask = char_mask.unsqueeze(1).to(x.dtype)
        for block in self.blocks:
            x = block(x, mask)

        token = self.utterance_token.expand(char_ids.shape[0], 1, -1)
        x = torch.cat([token, x.transpose(1, 2)], dim=1)
        mask = F.pad(char_mask, (1, 0), value=True)
        for block in self.attn_blocks:
            x = block(x, mask)
        return self.out(x[:, 0])


class DurationPredictor(nn.Module):
    """Predicts the total utterance length in compressed-latent frames (always positive)."""

    def __init__(self, cfg: ModelConfig, vocab_size: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        vocab_size = len(default_vocab()) if vocab_size is None else vocab_size

        self.reference_encoder = DurationReferenceEncoder(cfg)
        self.text_encoder = DurationTextEncoder(cfg, vocab_size)

        width = self.reference_encoder.out_dim + cfg.duration.dim
        if width != cfg.duration.nominal_head_width:
            rank_zero_info(
                f"duration head width {width} follows the encoder outputs,"
                f" not the nominal {cfg.duration.nominal_head_width}"
            )
        self.head = nn.Sequential(
            nn.Linear(width, width), nn.PReLU(width), nn.Linear(width, 1)
        )

    def forward(
        self,
        char_ids: torch.Tensor,
        char_mask: torch.Tensor,
        ref: torch.Tensor,
        ref_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """:return: (B,) durations in compressed frames"""
        if char_ids.shape[-1] == 0 or not char_mask.any(dim=1).all():
            raise EmptyInputError("text has no characters")
        if ref.shape[-1] == 0 or (ref_mask is not None and not ref_mask.any(dim=1).all()):
            raise EmptyInputError("reference latent has no frames")

        h = torch.cat([self.reference_encoder(ref, ref_mask), self.text_encoder(char_ids, char_mask)], dim=-1)
        return F.softplus(self.head(h).squeeze(-1))

    def predict_duration(
        self, chars: CharacterSequence, ref: Union[CompressedLatent, torch.Tensor]
    ) -> float:
        values = ref.values if isinstance(ref, CompressedLatent) else ref
        device = self.head[0].weight.device
        ids = chars.to_tensor().unsqueeze(0).to(device)
        out = self(
            ids,
            torch.ones_like(ids, dtype=torch.bool),
            values.unsqueeze(0).to(device=device, dtype=self.head[0].weight.dtype),
        )
        return float(out[0])


def frames_to_seconds(frames: float, cfg: ModelConfig) -> float:
    return frames * cfg.samples_per_compressed_frame / cfg.mel.sample_rate
