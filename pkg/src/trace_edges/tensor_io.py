"""Bit-exact readers and writers for the on-disk formats of the pipeline.

Two formats cover every artifact:

* ``ATNS`` — little-endian binary container for multi-timestep, multi-block
  attention stacks.  Layout: magic ``b"ATNS"``, ``u8`` version (= 1),
  ``u32`` timestep count, then per timestep a ``u32`` timestep value and a
  ``u32`` block count, and per block a ``u32`` width ``w`` followed by
  ``w**4`` float32 values (the row-major ``(w*w, w*w)`` attention matrix).
* PGM (P5) — all rasters.  ``maxval=255`` stores soft/binary masks scaled
  to ``[0, 1]``; ``maxval=65535`` stores raw integer ids (big-endian words,
  as the PGM convention requires).  Panoptic id rasters carry a
  ``<name>.segments.jsonl`` sidecar with one ``{id, category, is_thing}``
  record per segment.

Readers never hand back a container violating its invariants: every
corruption surfaces as a typed :mod:`trace_edges.errors` exception.
All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    CategoryMismatch,
    IoFailure,
    NonStochastic,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedVersion,
)
from .validation import ROW_SUM_TOL, as_grid, check_unit_interval

ATNS_MAGIC = b"ATNS"
ATNS_VERSION = 1

# Rows whose sum deviates by more than the stack tolerance but at most this
# much are silently rescaled on read (exporter float truncation); anything
# beyond indicates corruption and is rejected.
RENORM_TOL = 1e-3


@dataclass
class AttentionBlock:
    """One self-attention map at spatial width ``width``.

    ``map`` has shape ``(width**2, width**2)``, dtype float32, and each row
    is a probability distribution over key pixels.
    """

    width: int
    map: np.ndarray


@dataclass
class AttentionStack:
    """Per-timestep, per-block row-stochastic self-attention matrices."""

    timesteps: list[int]
    blocks: list[list[AttentionBlock]] = field(default_factory=list)

    @property
    def max_width(self) -> int:
        return max(b.width for per_t in self.blocks for b in per_t)

    def validate(self) -> None:
        if len(self.timesteps) != len(self.blocks):
            raise ShapeMismatch("one block list required per timestep")
        if any(t1 <= t0 for t0, t1 in zip(self.timesteps, self.timesteps[1:])):
            raise ShapeMismatch("timesteps must be strictly increasing")
        if not self.blocks or any(not per_t for per_t in self.blocks):
            raise ShapeMismatch("every timestep needs at least one block")
        w_max = self.max_width
        for per_t in self.blocks:
            for blk in per_t:
                n = blk.width * blk.width
                if blk.width <= 0 or blk.map.shape != (n, n):
                    raise ShapeMismatch(
                        f"block declares width {blk.width} but map is {blk.map.shape}"
                    )
                if w_max % blk.width:
                    raise ShapeMismatch(
                        f"max width {w_max} is not a multiple of block width {blk.width}"
                    )
                if blk.map.min() < 0.0 or blk.map.max() > 1.0:
                    raise NonStochastic("attention entries must lie in [0, 1]")
                dev = np.max(np.abs(blk.map.sum(axis=1, dtype=np.float64) - 1.0))
                if dev > ROW_SUM_TOL:
                    raise NonStochastic(f"row sums deviate by {dev:.2e}")


class _Cursor:
    """Sequential reader over a byte buffer with typed failures."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ShapeMismatch("payload ends before the declared content")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32_array(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4", count=count).copy()

    def done(self) -> bool:
        return self.pos == len(self.data)


def read_attention_stack(path) -> AttentionStack:
    """Parse an ATNS file, repairing mildly drifted row sums.

    Rows whose sum deviates from 1 by more than the stack invariant
    (:data:`~trace_edges.validation.ROW_SUM_TOL`) but at most
    :data:`RENORM_TOL` are rescaled to unit sum; larger deviations raise
    :class:`NonStochastic`.  Valid files round-trip bit-exactly because
    already-conforming rows are left untouched.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    cur = _Cursor(data)
    if cur.take(4) != ATNS_MAGIC:
        raise BadMagic(f"{path} is not an ATNS file")
    version = cur.u8()
    if version != ATNS_VERSION:
        raise UnsupportedVersion(f"ATNS version {version} is not supported")

    n_steps = cur.u32()
    if n_steps == 0:
        raise ShapeMismatch("stack declares zero timesteps")
    timesteps: list[int] = []
    blocks: list[list[AttentionBlock]] = []
    for _ in range(n_steps):
        t = cur.u32()
        n_blocks = cur.u32()
        if n_blocks == 0:
            raise ShapeMismatch("timestep declares zero blocks")
        per_t: list[AttentionBlock] = []
        for _ in range(n_blocks):
            w = cur.u32()
            if w == 0:
                raise ShapeMismatch("block width must be positive")
            n = w * w
            mat = cur.f32_array(n * n).reshape(n, n)
            per_t.append(AttentionBlock(width=w, map=_repair_rows(mat)))
        timesteps.append(t)
        blocks.append(per_t)
    if not cur.done():
        raise ShapeMismatch("trailing bytes after the declared content")
    if any(t1 <= t0 for t0, t1 in zip(timesteps, timesteps[1:])):
        raise ShapeMismatch("timesteps must be strictly increasing")

    stack = AttentionStack(timesteps=timesteps, blocks=blocks)
    stack.validate()
    return stack


def _repair_rows(mat: np.ndarray) -> np.ndarray:
    if mat.size and (mat.min() < 0.0 or mat.max() > 1.0 + RENORM_TOL):
        raise NonStochastic("attention entries outside [0, 1]")
    sums = mat.sum(axis=1, dtype=np.float64)
    dev = np.abs(sums - 1.0)
    worst = float(dev.max()) if dev.size else 0.0
    if worst > RENORM_TOL:
        raise NonStochastic(f"row sums deviate by {worst:.2e} (> {RENORM_TOL})")
    drifted = dev > ROW_SUM_TOL
    if drifted.any():
        mat = mat.copy()
        mat[drifted] = (
            mat[drifted].astype(np.float64) / sums[drifted, None]
        ).astype(np.float32)
    return mat


def write_attention_stack(stack: AttentionStack, path) -> None:
    """Serialize a valid stack; ``read(write(stack))`` is the identity."""
    stack.validate()
    out = bytearray()
    out += ATNS_MAGIC
    out += struct.pack("<B", ATNS_VERSION)
    out += struct.pack("<I", len(stack.timesteps))
    for t, per_t in zip(stack.timesteps, stack.blocks):
        out += struct.pack("<II", t, len(per_t))
        for blk in per_t:
            out += struct.pack("<I", blk.width)
            out += np.ascontiguousarray(blk.map, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(bytes(out))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# PGM rasters
# ---------------------------------------------------------------------------


def _parse_pgm(data: bytes):
    """Return (width, height, maxval, payload_offset) for a P5 header."""
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise BadHeader("unexpected end of PGM header")
        return data[start:pos]

    if token() != b"P5":
        raise BadHeader("not a binary PGM (P5) file")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise BadHeader("PGM header fields must be integers") from exc
    if width <= 0 or height <= 0:
        raise BadHeader("PGM dimensions must be positive")
    if maxval not in (255, 65535):
        raise BadHeader(f"unsupported PGM maxval {maxval} (need 255 or 65535)")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise BadHeader("missing whitespace after maxval")
    return width, height, maxval, pos + 1


def read_mask_pgm(path) -> np.ndarray:
    """Read a P5 PGM.

    Returns float64 values in ``[0, 1]`` for maxval 255 and raw int32 ids
    for maxval 65535.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    width, height, maxval, offset = _parse_pgm(data)
    bytes_per = 1 if maxval == 255 else 2
    need = width * height * bytes_per
    payload = data[offset:]
    if len(payload) < need:
        raise TruncatedPayload(
            f"PGM declares {width}x{height} but payload has {len(payload)} bytes"
        )
    if len(payload) > need:
        raise BadHeader("trailing bytes after PGM payload")
    if maxval == 255:
        arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
        return arr.astype(np.float64) / 255.0
    arr = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    return arr.astype(np.int32)


def write_mask_pgm(grid, path) -> None:
    """Write a raster as P5 PGM.

    Float input must lie in ``[0, 1]`` and is quantized to maxval 255;
    integer input is written verbatim as 16-bit ids (maxval 65535).
    Quantized values round-trip exactly through :func:`read_mask_pgm`.
    """
    arr = np.asarray(grid)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D raster, got ndim={arr.ndim}")
    height, width = arr.shape
    if np.issubdtype(arr.dtype, np.integer):
        if arr.size and (arr.min() < 0 or arr.max() > 65535):
            raise ValueError("id raster values must fit in uint16")
        maxval, payload = 65535, arr.astype(">u2").tobytes()
    else:
        check_unit_interval(arr, "mask values")
        maxval = 255
        payload = np.rint(arr * 255.0).astype(np.uint8).tobytes()
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Panoptic label maps (16-bit PGM + segments sidecar)
# ---------------------------------------------------------------------------


@dataclass
class PanopticLabelMap:
    """Integer segment-id raster with category and thing/stuff metadata.

    ``grid`` holds non-negative segment ids with 0 meaning void.  Every
    nonzero id appearing in the grid must have a category, and every
    category a thing/stuff flag.
    """

    grid: np.ndarray
    categories: dict[int, int]
    thing_flags: dict[int, bool]

    def validate(self) -> None:
        grid = as_grid(self.grid, dtype=np.int64)
        ids = np.unique(grid)
        for seg_id in ids[ids > 0].tolist():
            if seg_id not in self.categories:
                raise CategoryMismatch(f"segment {seg_id} has no category record")
        for seg_id, cat in self.categories.items():
            if cat not in self.thing_flags:
                raise CategoryMismatch(
                    f"category {cat} of segment {seg_id} has no thing/stuff flag"
                )

    def segment_ids(self) -> list[int]:
        ids = np.unique(np.asarray(self.grid))
        return [int(i) for i in ids if i > 0]


def _sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".segments.jsonl")


def write_panoptic(pan: PanopticLabelMap, path) -> None:
    """Write the id raster plus its ``<name>.segments.jsonl`` sidecar."""
    pan.validate()
    write_mask_pgm(np.asarray(pan.grid, dtype=np.int32), path)
    records = []
    for seg_id in sorted(pan.categories):
        cat = pan.categories[seg_id]
        records.append(
            json.dumps(
                {"id": seg_id, "category": cat, "is_thing": pan.thing_flags[cat]},
                sort_keys=True,
            )
        )
    try:
        _sidecar_path(path).write_text("\n".join(records) + ("\n" if records else ""))
    except OSError as exc:
        raise IoFailure(f"cannot write sidecar for {path}: {exc}") from exc


def read_panoptic(path) -> PanopticLabelMap:
    grid = read_mask_pgm(path)
    if not np.issubdtype(grid.dtype, np.integer):
        raise BadHeader("panoptic rasters must be 16-bit PGM (maxval 65535)")
    sidecar = _sidecar_path(path)
    try:
        lines = sidecar.read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read sidecar {sidecar}: {exc}") from exc
    categories: dict[int, int] = {}
    thing_flags: dict[int, bool] = {}
    for line in lines:
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            seg_id, cat, is_thing = int(rec["id"]), int(rec["category"]), bool(rec["is_thing"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise BadHeader(f"malformed segment record: {line!r}") from exc
        categories[seg_id] = cat
        thing_flags[cat] = is_thing
    pan = PanopticLabelMap(grid=grid, categories=categories, thing_flags=thing_flags)
    pan.validate()
    return pan


# ---------------------------------------------------------------------------
# Mask sets (directory of PGMs + JSON-lines index)
# ---------------------------------------------------------------------------

MASK_INDEX_NAME = "index.jsonl"


def write_mask_set(masks, directory, labels=None, scores=None) -> None:
    """Write soft masks as ``mask_###.pgm`` files plus an index.jsonl."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = list(labels) if labels is not None else [None] * len(masks)
    scores = list(scores) if scores is not None else [None] * len(masks)
    if len(labels) != len(masks) or len(scores) != len(masks):
        raise ShapeMismatch("labels/scores must align with masks")
    records = []
    for k, mask in enumerate(masks):
        name = f"mask_{k:03d}.pgm"
        write_mask_pgm(np.asarray(mask, dtype=np.float64), directory / name)
        records.append(
            json.dumps(
                {"mask": name, "label": labels[k], "score": scores[k]},
                sort_keys=True,
            )
        )
    try:
        (directory / MASK_INDEX_NAME).write_text(
            "\n".join(records) + ("\n" if records else "")
        )
    except OSError as exc:
        raise IoFailure(f"cannot write mask index in {directory}: {exc}") from exc


def read_mask_set(directory):
    """Read a mask directory; returns ``(masks, labels, scores)``."""
    directory = Path(directory)
    index = directory / MASK_INDEX_NAME
    try:
        lines = index.read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read mask index {index}: {exc}") from exc
    masks, labels, scores = [], [], []
    for line in lines:
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            name = rec["mask"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise BadHeader(f"malformed mask record: {line!r}") from exc
        masks.append(read_mask_pgm(directory / name))
        labels.append(rec.get("label"))
        scores.append(rec.get("score"))
    if all(lb is None for lb in labels):
        labels = None
    if all(sc is None for sc in scores):
        scores = None
    return masks, labels, scores
