import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import torch

from latent_flow_tts.config import ModelConfig
from latent_flow_tts.errors import ReferenceTooShortError
from latent_flow_tts.latent_ops import CompressedLatent
from latent_flow_tts.text import CharacterSequence, pad_character_batch


@dataclass
class TrainingItem:
    z1: CompressedLatent
    chars: CharacterSequence
    speaker: Optional[int] = None

    @property
    def n_frames(self) -> int:
        return self.z1.n_frames


@dataclass(frozen=True)
class ReferenceCrop:
    start_frame: int
    length_frames: int

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.length_frames


@dataclass
class DurationSample:
    chars: CharacterSequence
    ref: CompressedLatent
    target_frames: int

    def __post_init__(self):
        if self.target_frames < 1:
            raise ValueError(f"{self.target_frames=} should be at least 1")


def crop_bounds(n_frames: int, cfg: ModelConfig) -> Tuple[int, int]:
    """Shortest and longest admissible reference crop in compressed frames."""
    rate = cfg.compressed_frame_rate
    min_len = math.ceil(cfg.flow.ref_crop_min_s * rate)
    max_len = min(math.floor(cfg.flow.ref_crop_max_s * rate), n_frames // 2)
    if max_len < min_len:
        raise ReferenceTooShortError(
            f"utterance of {n_frames} frames cannot hold a reference crop of {min_len} frames"
            f" that is at most half of it"
        )
    return min_len, max_len


def _uniform_int(low: torch.Tensor, high: torch.Tensor, generator=None) -> torch.Tensor:
    """Uniform integers in [low, high] (inclusive), elementwise."""
    u = torch.rand(low.shape, generator=generator, dtype=torch.float64)
    return low + torch.floor(u * (high - low + 1).double()).long()


def sample_reference_crops(
    n_frames: int, cfg: ModelConfig, count: int, generator: Optional[torch.Generator] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """:return: start frames and lengths of `count` random reference crops"""
    min_len, max_len = crop_bounds(n_frames, cfg)
    lengths = _uniform_int(
        torch.full((count,), min_len), torch.full((count,), max_len), generator
    )
    starts = _uniform_int(torch.zeros(count, dtype=torch.long), n_frames - lengths, generator)
    return starts, lengths


def sample_reference_crop(
    n_frames: int, cfg: ModelConfig, generator: Optional[torch.Generator] = None
) -> ReferenceCrop:
    starts, lengths = sample_reference_crops(n_frames, cfg, 1, generator)
    return ReferenceCrop(int(starts[0]), int(lengths[0]))


def duration_reference_spans(
    n_frames: int,
    count: int,
    low: float = 0.05,
    high: float = 0.95,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Random segments whose start and end lie between low*n and high*n (at least one frame)."""
    if not 0.0 <= low < high <= 1.0:
        raise ValueError(f"{low=}, {high=} should satisfy 0 <= low < high <= 1")
    if n_frames < 1:
        raise ValueError(f"{n_frames=} should be at least 1")

    # inward rounding keeps spans inside the window; rounding to 9 places absorbs float error
    lo = math.ceil(round(low * n_frames, 9))
    hi = math.floor(round(high * n_frames, 9))
    if hi <= lo:
        # window narrower than a frame
        lo = min(math.floor(low * n_frames), n_frames - 1)
        hi = min(n_frames, max(lo + 1, math.ceil(high * n_frames)))
    starts = _uniform_int(torch.full((count,), lo), torch.full((count,), hi - 1), generator)
    ends = _uniform_int(starts + 1, torch.full((count,), hi), generator)
    return starts, ends - starts


def sample_duration_reference(
    n_frames: int,
    generator: Optional[torch.Generator] = None,
    low: float = 0.05,
    high: float = 0.95,
) -> ReferenceCrop:
    starts, lengths = duration_reference_spans(n_frames, 1, low, high, generator)
    return ReferenceCrop(int(starts[0]), int(lengths[0]))


def lengths_to_mask(lengths: torch.Tensor, max_len: Optional[int] = None) -> torch.Tensor:
    max_len = int(lengths.max()) if max_len is None else max_len
    return torch.arange(max_len, device=lengths.device).unsqueeze(0) < lengths.unsqueeze(1)


def pad_latents(latents: Sequence[torch.Tensor]) -> Tuple[torch.Tensor, torch.Tensor]:
    """:return: zero-padded (B, C, T_max) tensor and the lengths (B,)"""
    lengths = torch.tensor([z.shape[-1] for z in latents], dtype=torch.long)
    out = latents[0].new_zeros(len(latents), latents[0].shape[0], int(lengths.max()))
    for i, z in enumerate(latents):
        out[i, :, : z.shape[-1]] = z
    return out, lengths


@dataclass
class TrainingBatch:
    """
    Padded batch of training items with their reference crops.
    z1: (B, C, T), lengths: (B,), char_ids/char_mask: (B, L).
    """

    z1: torch.Tensor
    lengths: torch.Tensor
    char_ids: torch.Tensor
    char_mask: torch.Tensor
    crops: List[ReferenceCrop]

    @property
    def batch_size(self) -> int:
        return self.z1.shape[0]

    @property
    def latent_mask(self) -> torch.Tensor:
        return lengths_to_mask(self.lengths, self.z1.shape[-1]).to(self.z1.device)

    def reference(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """:return: the cropped reference latents (B, C, T_ref_max) and their mask (B, T_ref_max)"""
        refs = [self.z1[i, :, c.start_frame : c.end_frame] for i, c in enumerate(self.crops)]
        ref, ref_lengths = pad_latents(refs)
        return ref, lengths_to_mask(ref_lengths).to(ref.device)

    def loss_mask(self) -> torch.Tensor:
        """(B, 1, T) mask: 1 at valid frames outside the reference crop, 0 elsewhere."""
        mask = self.latent_mask.clone()
        for i, c in enumerate(self.crops):
            mask[i, c.start_frame : c.end_frame] = False
        return mask.unsqueeze(1).to(self.z1.dtype)

    def repeat_interleave(self, repeats: int) -> "TrainingBatch":
        """Each item duplicated `repeats` times in place (crops included)."""
        return TrainingBatch(
            z1=self.z1.repeat_interleave(repeats, dim=0),
            lengths=self.lengths.repeat_interleave(repeats),
            char_ids=self.char_ids.repeat_interleave(repeats, dim=0),
            char_mask=self.char_mask.repeat_interleave(repeats, dim=0),
            crops=[c for c in self.crops for _ in range(repeats)],
        )

    def to(self, device) -> "TrainingBatch":
        return replace(
            self,
            z1=self.z1.to(device),
            lengths=self.lengths.to(device),
            char_ids=self.char_ids.to(device),
            char_mask=self.char_mask.to(device),
        )


def collate_items(
    items: Sequence[TrainingItem],
    cfg: ModelConfig,
    generator: Optional[torch.Generator] = None,
    crops: Optional[Sequence[ReferenceCrop]] = None,
) -> TrainingBatch:
    if len(items) == 0:
        raise ValueError("cannot collate an empty list of items")

    z1, lengths = pad_latents([item.z1.values for item in items])
    char_ids, char_mask = pad_character_batch([item.chars for item in items])

    if crops is None:
        crops = [sample_reference_crop(int(n), cfg, generator) for n in lengths]

    return TrainingBatch(
        z1=z1, lengths=lengths, char_ids=char_ids, char_mask=char_mask, crops=list(crops)
    )


@dataclass
class DurationBatch:
    char_ids: torch.Tensor
    char_mask: torch.Tensor
    ref: torch.Tensor
    ref_mask: torch.Tensor
    target: torch.Tensor

    def to(self, device) -> "DurationBatch":
        return DurationBatch(
            **{k: v.to(device) for k, v in self.__dict__.items()}
        )


def collate_duration(samples: Sequence[DurationSample]) -> DurationBatch:
    char_ids, char_mask = pad_character_batch([s.chars for s in samples])
    ref, ref_lengths = pad_latents([s.ref.values for s in samples])
    return DurationBatch(
        char_ids=char_ids,
        char_mask=char_mask,
        ref=ref,
        ref_mask=lengths_to_mask(ref_lengths),
        target=torch.tensor([float(s.target_frames) for s in samples]),
    )
