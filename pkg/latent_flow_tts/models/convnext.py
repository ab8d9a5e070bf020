from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn


class PaddedConv1d(nn.Conv1d):
    """
    Conv1d that keeps the sequence length: causal convolutions pad on the left only,
    non-causal ones pad symmetrically. Causal instances also run incrementally through
    `forward_streaming`, carrying the last `context_size` input frames between chunks.
    """

    def __init__(self, *args, causal: bool = False, **kwargs):
        kwargs.pop("padding", None)
        super().__init__(*args, padding=0, **kwargs)
        if self.stride[0] != 1:
            raise ValueError(f"{self.stride=} is not supported, only stride 1")
        self.causal = causal

    @property
    def context_size(self) -> int:
        return (self.kernel_size[0] - 1) * self.dilation[0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ctx = self.context_size
        pad = (ctx, 0) if self.causal else (ctx // 2, ctx - ctx // 2)
        return super().forward(F.pad(x, pad))

    def init_buffer(self, batch_size: int = 1) -> torch.Tensor:
        return self.weight.new_zeros(batch_size, self.in_channels, self.context_size)

    def forward_streaming(
        self, x: torch.Tensor, buffer: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        if self.causal is False:
            raise RuntimeError("only causal convolutions can run in streaming mode")

        x = torch.cat([buffer, x], dim=-1)
        return super().forward(x), x[..., x.shape[-1] - self.context_size :]


class ConvNeXtBlock(nn.Module):
    """
    1-D ConvNeXt block: depthwise conv -> LayerNorm -> pointwise expansion -> GELU
    -> pointwise projection -> layer scale, with a residual connection.
    """

    def __init__(
        self,
        width: int,
        intermediate: int,
        kernel: int = 7,
        dilation: int = 1,
        causal: bool = False,
        layer_scale: float = 1e-6,
        init_std: float = 0.02,
    ):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"{kernel=} should be odd")
        if dilation < 1:
            raise ValueError(f"{dilation=} should be at least 1")

        self.kernel = kernel
        self.dilation = dilation
        self.causal = causal

        self.dwconv = PaddedConv1d(
            width, width, kernel, dilation=dilation, groups=width, causal=causal
        )
        self.norm = nn.LayerNorm(width, eps=1e-6)
        self.pwconv1 = nn.Linear(width, intermediate)
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(intermediate, width)
        self.gamma = nn.Parameter(layer_scale * torch.ones(width))

        self.reset_parameters(init_std)

    def reset_parameters(self, init_std: float = 0.02):
        for linear in (self.pwconv1, self.pwconv2):
            nn.init.trunc_normal_(linear.weight, std=init_std)
            nn.init.zeros_(linear.bias)

        # depthwise kernels start as a (noisy) identity on the current frame
        with torch.no_grad():
            self.dwconv.weight.normal_(0.0, init_std)
            center = self.kernel - 1 if self.causal else self.kernel // 2
            self.dwconv.weight[:, 0, center] += 1.0
            self.dwconv.bias.zero_()

    def _pointwise(self, residual: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        x = x.transpose(1, 2)
        x = self.pwconv2(self.act(self.pwconv1(self.norm(x))))
        return residual + (self.gamma * x).transpose(1, 2)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        :param x: tensor of shape (B, C, T)
        :param mask: optional (B, 1, T) tensor, 1 at valid frames
        """
        if mask is not None:
            x = x * mask
        x = self._pointwise(x, self.dwconv(x))
        if mask is not None:
            x = x * mask
        return x

    def forward_streaming(
        self, x: torch.Tensor, buffer: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        h, buffer = self.dwconv.forward_streaming(x, buffer)
        return self._pointwise(x, h), buffer
