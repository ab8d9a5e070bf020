from typing import List, Optional, Sequence

import pytorch_lightning as pl
import torch
import torch.nn.functional as F
from pytorch_lightning.utilities import rank_zero_info
from torch.utils.data import DataLoader

from latent_flow_tts.audio import AudioWaveform
from latent_flow_tts.config import ModelConfig
from latent_flow_tts.data.batches import (
    DurationSample,
    TrainingItem,
    collate_duration,
    collate_items,
    sample_duration_reference,
)
from latent_flow_tts.errors import SampleRateMismatchError
from latent_flow_tts.latent_ops import CompressedLatent


def _check_nonempty(corpus: Sequence, name: str):
    if len(corpus) == 0:
        raise ValueError(f"{name} corpus is empty")


class AudioSegmentDataset(torch.utils.data.IterableDataset):
    """Endless stream of fixed-length crops taken uniformly from random clips; short clips are zero-padded."""

    def __init__(self, clips: Sequence[torch.Tensor], segment_samples: int, seed: int = 0):
        super().__init__()
        _check_nonempty(clips, "audio")
        self.clips = list(clips)
        self.segment_samples = segment_samples
        self.seed = seed

    def __iter__(self):
        g = torch.Generator().manual_seed(self.seed)
        while True:
            clip = self.clips[int(torch.randint(len(self.clips), (1,), generator=g))]
            excess = clip.shape[-1] - self.segment_samples
            if excess <= 0:
                yield F.pad(clip, (0, -excess))
                continue
            offset = int(torch.randint(excess + 1, (1,), generator=g))
            yield clip[offset : offset + self.segment_samples]


class AutoencoderDataModule(pl.LightningDataModule):
    def __init__(
        self,
        clips: Sequence[AudioWaveform],
        sample_rate: int = 44100,
        segment_samples: int = 8192,
        batch_size: int = 128,
        seed: int = 0,
    ):
        """
        :param clips: training audio, already at `sample_rate`
        :param segment_samples: length of the random crops fed to the discriminators
        """
        super().__init__()
        _check_nonempty(clips, "audio")
        for clip in clips:
            if clip.sample_rate != sample_rate:
                raise SampleRateMismatchError(
                    f"clip at {clip.sample_rate} Hz in a {sample_rate} Hz corpus"
                )
        self.save_hyperparameters(ignore=["clips"])
        self.clips = [torch.as_tensor(clip.samples, dtype=torch.float32) for clip in clips]

    def setup(self, stage: Optional[str] = None):
        self.dataset = AudioSegmentDataset(
            self.clips, self.hparams.segment_samples, self.hparams.seed
        )

    def train_dataloader(self):
        return DataLoader(self.dataset, batch_size=self.hparams.batch_size)


class FlowItemDataset(torch.utils.data.IterableDataset):
    """Yields collated TrainingBatches of items drawn with replacement, each with a fresh reference crop."""

    def __init__(self, items: Sequence[TrainingItem], cfg: ModelConfig, batch_size: int, seed: int = 0):
        super().__init__()
        _check_nonempty(items, "training")
        self.items = list(items)
        self.cfg = cfg
        self.batch_size = batch_size
        self.seed = seed

    def __iter__(self):
        g = torch.Generator().manual_seed(self.seed)
        while True:
            index = torch.randint(len(self.items), (self.batch_size,), generator=g).tolist()
            yield collate_items([self.items[i] for i in index], self.cfg, generator=g)


class FlowDataModule(pl.LightningDataModule):
    def __init__(
        self,
        items: Sequence[TrainingItem],
        cfg: ModelConfig,
        val_items: Optional[Sequence[TrainingItem]] = None,
        batch_size: int = 64,
        seed: int = 0,
    ):
        """
        :param items: normalized compressed latents with their transcripts
        :param val_items: held-out items; the whole list forms a single validation batch
        """
        super().__init__()
        _check_nonempty(items, "training")
        rank_zero_info("Flow batches come from an iterable dataset, steps are set by the Trainer")
        self.save_hyperparameters(ignore=["items", "cfg", "val_items"])
        self.items = list(items)
        self.val_items = None if val_items is None else list(val_items)
        self.cfg = cfg

    def setup(self, stage: Optional[str] = None):
        self.dataset = FlowItemDataset(
            self.items, self.cfg, self.hparams.batch_size, self.hparams.seed
        )

    def train_dataloader(self):
        return DataLoader(self.dataset, batch_size=None)

    def val_dataloader(self):
        if not self.val_items:
            return []
        return DataLoader([self.val_items], batch_size=None, collate_fn=lambda x: x)


class DurationDataset(torch.utils.data.IterableDataset):
    """
    Yields DurationBatches: the target is the full utterance length and the reference a random
    segment between `low` and `high` of the same utterance.
    """

    def __init__(
        self,
        items: Sequence[TrainingItem],
        batch_size: int,
        seed: int = 0,
        low: float = 0.05,
        high: float = 0.95,
    ):
        super().__init__()
        _check_nonempty(items, "duration")
        self.items = list(items)
        self.batch_size = batch_size
        self.seed = seed
        self.low, self.high = low, high

    def sample(self, item: TrainingItem, generator: torch.Generator) -> DurationSample:
        span = sample_duration_reference(item.n_frames, generator, self.low, self.high)
        return DurationSample(
            chars=item.chars,
            ref=CompressedLatent(
                values=item.z1.values[:, span.start_frame : span.end_frame], k_c=item.z1.k_c
            ),
            target_frames=item.n_frames,
        )

    def __iter__(self):
        g = torch.Generator().manual_seed(self.seed)
        while True:
            index = torch.randint(len(self.items), (self.batch_size,), generator=g).tolist()
            yield collate_duration([self.sample(self.items[i], g) for i in index])


class DurationDataModule(pl.LightningDataModule):
    def __init__(
        self,
        items: Sequence[TrainingItem],
        batch_size: int = 128,
        seed: int = 0,
        ref_span_low: float = 0.05,
        ref_span_high: float = 0.95,
    ):
        super().__init__()
        _check_nonempty(items, "duration")
        self.save_hyperparameters(ignore=["items"])
        self.items: List[TrainingItem] = list(items)

    def setup(self, stage: Optional[str] = None):
        self.dataset = DurationDataset(
            self.items,
            self.hparams.batch_size,
            self.hparams.seed,
            self.hparams.ref_span_low,
            self.hparams.ref_span_high,
        )

    def train_dataloader(self):
        return DataLoader(self.dataset, batch_size=None)
