"""Forward-hook capture of self-attention probabilities."""

from __future__ import annotations

import numpy as np
import torch


class AttentionTap:
    """Context manager collecting head-averaged attention per block.

    Hooks are registered on the given named modules; each forward pass
    appends ``(width, map)`` pairs where ``map`` is the float32
    head-averaged row-stochastic attention matrix.  Model outputs are
    not altered.
    """

    def __init__(self, modules: dict[str, torch.nn.Module]):
        self.modules = dict(modules)
        self._handles = []
        self.captured: list[tuple[str, int, np.ndarray]] = []

    def _hook(self, name: str):
        def grab(module, inputs, output):
            _, attn = output
            averaged = attn.detach().mean(dim=0)  # over heads
            self.captured.append(
                (name, module.width, averaged.to(torch.float32).cpu().numpy())
            )
        return grab

    def __enter__(self) -> "AttentionTap":
        for name, module in self.modules.items():
            self._handles.append(module.register_forward_hook(self._hook(name)))
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        for handle in self._handles:
            handle.remove()
        self._handles.clear()
        return False

    def drain(self) -> list[tuple[str, int, np.ndarray]]:
        out, self.captured = self.captured, []
        return out
