"""Strided attention export: images in, validated ATNS stacks out.

For every image the backbone's clean latent is noised at each strided
timestep (one forward per step on the noised latent, same noise draw
along the trajectory) and the hooked attention maps are written as one
ATNS file, head-averaged and row-stochastic.  No text conditioning is
used anywhere: backbones run on the image alone (null prompt).

One image is in flight at a time and file writes are serialized, so a
job is deterministic for a given seed; a corrupted image produces an
error record in the manifest and the job continues.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from trace_edges.tensor_io import AttentionBlock, AttentionStack, write_attention_stack

from .backbones import load_backbone
from .errors import ResolutionMismatch, TraceExportError
from .hooks import AttentionTap

MANIFEST_NAME = "manifest.json"


@dataclass
class ExportJob:
    model_id: str
    image_paths: list
    output_dir: Path
    stride: int = 100
    seed: int = 0
    block_names: list[str] | None = None  # None = all attention blocks

    def validate_against(self, scheduler_steps: int) -> None:
        if self.stride <= 0 or scheduler_steps % self.stride:
            raise ValueError(
                f"stride {self.stride} must divide the scheduler's "
                f"{scheduler_steps} steps"
            )
        if not self.image_paths:
            raise ValueError("no images to export")


@dataclass
class ImageRecord:
    source: str
    output: str | None = None
    status: str = "ok"
    error: str | None = None
    timesteps: int = 0
    block_widths: list[int] = field(default_factory=list)


def _load_image(path, resolution: int) -> torch.Tensor:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1) * 2.0 - 1.0)


def export(job: ExportJob) -> list[ImageRecord]:
    """Run the job; returns per-image records (also written to the manifest)."""
    model = load_backbone(job.model_id, seed=job.seed)
    model.eval()
    job.validate_against(model.scheduler_steps)

    modules = model.attention_modules()
    if job.block_names is not None:
        missing = [n for n in job.block_names if n not in modules]
        if missing:
            raise ValueError(f"unknown attention blocks: {missing}")
        modules = {n: modules[n] for n in job.block_names}

    timesteps = list(range(job.stride, model.scheduler_steps + 1, job.stride))
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records: list[ImageRecord] = []
    for index, path in enumerate(job.image_paths):
        record = ImageRecord(source=str(path))
        try:
            image = _load_image(path, model.native_resolution)
            stack = _export_one(model, modules, image, timesteps, job.seed, index)
            out_name = f"{Path(path).stem}.atns"
            write_attention_stack(stack, out_dir / out_name)
            record.output = out_name
            record.timesteps = len(stack.timesteps)
            record.block_widths = [b.width for b in stack.blocks[0]]
        except (TraceExportError, OSError, ValueError) as exc:
            record.status = "error"
            record.error = str(exc)
        records.append(record)

    manifest = {
        "model": job.model_id,
        "stride": job.stride,
        "seed": job.seed,
        "scheduler_steps": model.scheduler_steps,
        "native_resolution": model.native_resolution,
        "blocks": sorted(modules),
        "images": [
            {
                "source": r.source,
                "output": r.output,
                "status": r.status,
                "error": r.error,
                "timesteps": r.timesteps,
                "block_widths": r.block_widths,
            }
            for r in records
        ],
    }
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return records


def _export_one(model, modules, image, timesteps, seed, image_index) -> AttentionStack:
    with torch.no_grad():
        latent = model.encode(image)
        # one generator per image: the same noise draw serves every step,
        # keeping the strided trajectory continuous
        generator = torch.Generator().manual_seed((seed << 20) + image_index)
        eps_seed = int(torch.randint(0, 2**31 - 1, (1,), generator=generator))
        per_step: list[list[AttentionBlock]] = []
        for t in timesteps:
            step_gen = torch.Generator().manual_seed(eps_seed)
            noised = model.noise(latent, t, step_gen)
            with AttentionTap(modules) as tap:
                model(noised, t)
                captured = tap.drain()
            blocks = [
                AttentionBlock(width=width, map=_stochastic(mat))
                for _, width, mat in sorted(captured, key=lambda c: c[0])
            ]
            per_step.append(blocks)
    stack = AttentionStack(timesteps=list(timesteps), blocks=per_step)
    stack.validate()
    return stack


def _stochastic(mat: np.ndarray) -> np.ndarray:
    sums = mat.sum(axis=1, dtype=np.float64)
    if np.max(np.abs(sums - 1.0)) > 1e-3:
        raise ResolutionMismatch("captured attention rows are not stochastic")
    return (mat.astype(np.float64) / sums[:, None]).astype(np.float32)
