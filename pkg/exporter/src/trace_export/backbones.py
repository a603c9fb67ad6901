"""Diffusion backbones whose self-attention the exporter can tap.

A backbone is a torch module exposing:

* ``native_resolution`` — input images are resized to this square size;
* ``scheduler_steps`` — length of the noising trajectory (default 1000);
* ``encode(image)`` — image tensor ``(3, H, W)`` to the clean latent;
* ``noise(latent, t, generator)`` — the noised latent at step ``t``;
* ``attention_modules()`` — named self-attention blocks to hook; each
  block's forward returns ``(features, attention)`` with ``attention``
  of shape ``(heads, n, n)`` so a forward hook can capture it.

The built-in ``toy-unet`` (two attention stages at different widths) and
``toy-dit`` (single stage) backbones are tiny randomly-initialized
models for contract testing: deterministic for a given seed and cheap
enough for CPU.  Their signal/noise mixing follows a smooth ramp with
flat endpoints, so strided attention trajectories change slowest at the
clean and noise ends and fastest in between — the transition profile
real denoisers show at full scale.  Unrecognized model ids attempt a
``diffusers`` import and raise :class:`ModelLoadFailure` when that is
not available.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ModelLoadFailure, ResolutionMismatch


class SelfAttentionBlock(nn.Module):
    """Multi-head self-attention over a ``width x width`` token grid."""

    def __init__(self, dim: int, heads: int, width: int, generator: torch.Generator):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.width = width
        self.head_dim = dim // heads
        def mat():
            w = torch.empty(dim, dim)
            nn.init.normal_(w, std=dim**-0.5, generator=generator)
            return nn.Parameter(w)
        self.w_q = mat()
        self.w_k = mat()
        self.w_v = mat()

    def forward(self, x: torch.Tensor):
        n, dim = x.shape
        if n != self.width * self.width:
            raise ResolutionMismatch(
                f"block expects {self.width ** 2} tokens, got {n}"
            )
        def split(w):
            return (x @ w).reshape(n, self.heads, self.head_dim).transpose(0, 1)
        q, k, v = split(self.w_q), split(self.w_k), split(self.w_v)
        logits = q @ k.transpose(1, 2) / math.sqrt(self.head_dim)
        attn = torch.softmax(logits, dim=-1)  # (heads, n, n)
        out = (attn @ v).transpose(0, 1).reshape(n, dim)
        return out, attn


class _ToyBackbone(nn.Module):
    """Tiny patch-embedding denoiser trunk with hookable attention."""

    scheduler_steps = 1000

    def __init__(self, widths: tuple[int, ...], seed: int, dim: int = 16, heads: int = 4):
        super().__init__()
        self.widths = widths
        self.native_resolution = 4 * max(widths)
        generator = torch.Generator().manual_seed(seed)
        self.patch = nn.Conv2d(3, dim, kernel_size=4, stride=4)
        nn.init.normal_(self.patch.weight, std=0.2, generator=generator)
        nn.init.zeros_(self.patch.bias)
        self.blocks = nn.ModuleDict(
            {
                f"stage{i}": SelfAttentionBlock(dim, heads, w, generator)
                for i, w in enumerate(widths)
            }
        )

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        if image.shape != (3, self.native_resolution, self.native_resolution):
            raise ResolutionMismatch(
                f"expected (3, {self.native_resolution}, {self.native_resolution}), "
                f"got {tuple(image.shape)}"
            )
        latent = self.patch(image.unsqueeze(0))[0]  # (dim, w0, w0)
        return latent / latent.std().clamp_min(1e-6)

    def noise(self, latent: torch.Tensor, t: int, generator: torch.Generator) -> torch.Tensor:
        # smooth mixing ramp with flat endpoints: the strided attention
        # trajectory is nearly stationary at both ends of the schedule
        u = t / self.scheduler_steps
        ramp = u * u * (3.0 - 2.0 * u)
        eps = torch.randn(latent.shape, generator=generator)
        return (1.0 - ramp) * latent + ramp * eps

    def attention_modules(self) -> dict[str, SelfAttentionBlock]:
        return dict(self.blocks)

    def forward(self, latent: torch.Tensor, t: int) -> torch.Tensor:
        x = latent  # (dim, w0, w0)
        for block in self.blocks.values():
            w = block.width
            if x.shape[-1] != w:
                if x.shape[-1] % w:
                    raise ResolutionMismatch(
                        f"cannot pool {x.shape[-1]} tokens per side down to {w}"
                    )
                x = torch.nn.functional.avg_pool2d(
                    x.unsqueeze(0), kernel_size=x.shape[-1] // w
                )[0]
            tokens = x.flatten(1).transpose(0, 1)  # (w*w, dim)
            out, _ = block(tokens)
            x = (tokens + out).transpose(0, 1).reshape(x.shape)
        return x


def load_backbone(model_id: str, seed: int = 0) -> nn.Module:
    """Build a backbone from its id; toy ids never touch the network."""
    if model_id == "toy-unet":
        return _ToyBackbone(widths=(8, 4), seed=seed)
    if model_id == "toy-dit":
        return _ToyBackbone(widths=(8,), seed=seed)
    try:
        import diffusers  # noqa: F401
    except ImportError as exc:
        raise ModelLoadFailure(
            f"model {model_id!r} is not a built-in backbone and the diffusers "
            "runtime is unavailable"
        ) from exc
    raise ModelLoadFailure(
        f"no adapter registered for {model_id!r}; built-ins: toy-unet, toy-dit"
    )
