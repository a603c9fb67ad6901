"""Command-line pipeline: select / edges / refine / eval / synth.

Every stage is a deterministic function of its inputs, flags and seed;
running a stage twice produces byte-identical artifacts.  Reports are
JSON, rasters are PGM, attention tensors are ATNS.  Exit codes: 0 on
success, 2 on malformed input or contract violation, 3 on an internal
invariant breach (never expected).  Set ``TRACE_EDGES_LOG`` to
``error``/``info``/``debug`` to control diagnostics on stderr.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import metrics
from .aggregation import aggregate
from .boundary import FOUR, boundary_divergence, ternarize, write_ternary_pgm
from .emergence import DivergenceMetric, select_emergence_step
from .errors import ShapeMismatch, TraceEdgesError
from .propagation import (
    AffinityParams,
    MaskSet,
    connected_components,
    merge_masks,
    propagate,
    split_by_components,
    upscale_edges,
)
from .synthetic import (
    DEFAULT_TIMESTEPS,
    GammaSchedule,
    kl_second_order_check,
    random_similarity_field,
    smoothstep_schedule,
    synth_attention,
    synth_two_instance_field,
)
from .tensor_io import (
    AttentionBlock,
    AttentionStack,
    read_attention_stack,
    read_mask_pgm,
    read_mask_set,
    read_panoptic,
    write_attention_stack,
    write_mask_pgm,
    write_mask_set,
)
from .validation import logical_cores

log = logging.getLogger("trace_edges")

_METRIC_CHOICES = [m.value for m in DivergenceMetric]


def _configure_logging() -> None:
    level = os.environ.get("TRACE_EDGES_LOG", "error").lower()
    numeric = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level, logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=numeric, format="%(levelname)s %(message)s")


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _round(x: float | None, digits: int = 12) -> float | None:
    return None if x is None else round(float(x), digits)


@click.group()
def cli() -> None:
    """Instance-edge decoding pipeline over attention stacks."""
    _configure_logging()


@cli.command("select")
@click.argument("stack_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", type=click.Choice(_METRIC_CHOICES), default="kl", show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory.")
def cmd_select(stack_path: str, metric: str, out: str) -> None:
    """Pick the instance-emergent timestep of an attention stack.

    Writes ``step_selection.json`` with the chosen timestep and the
    per-step divergence curve, plus ``instance_attention.atns`` holding
    the selected aggregated map.
    """
    stack = read_attention_stack(stack_path)
    result = select_emergence_step(stack, metric)
    out_dir = Path(out)
    _dump_json(
        {
            "t_star": result.t_star,
            "metric": metric,
            "divergences": [
                {"t": t, "value": _round(v)} for t, v in result.per_step_divergence
            ],
        },
        out_dir / "step_selection.json",
    )
    selected = AttentionStack(
        timesteps=[result.t_star],
        blocks=[[AttentionBlock(
            width=result.selected_map.width,
            map=result.selected_map.map.astype(np.float32),
        )]],
    )
    write_attention_stack(selected, out_dir / "instance_attention.atns")
    log.info("selected t_star=%d", result.t_star)


@cli.command("edges")
@click.argument("stack_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", type=click.Choice(_METRIC_CHOICES), default="kl", show_default=True)
@click.option(
    "--neighborhood",
    type=click.Choice(["four", "eight"]),
    default=FOUR,
    show_default=True,
)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_edges(stack_path: str, metric: str, neighborhood: str, out: str) -> None:
    """Score boundaries and write score + ternary label rasters.

    A multi-timestep stack goes through step selection first; a
    single-timestep stack is used directly.  Scores are written as an
    8-bit PGM scaled by the maximum score; labels use the byte coding
    interior=0, uncertain=128, edge=255.
    """
    stack = read_attention_stack(stack_path)
    if len(stack.timesteps) >= 2:
        result = select_emergence_step(stack, metric)
        sa, t_used = result.selected_map, result.t_star
    else:
        sa, t_used = aggregate(stack.blocks[0]), stack.timesteps[0]
    scores = boundary_divergence(sa, neighborhood)
    ternary = ternarize(scores)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    peak = float(scores.max())
    scaled = scores / peak if peak > 0 else scores
    write_mask_pgm(scaled, out_dir / "boundary_scores.pgm")
    write_ternary_pgm(ternary, out_dir / "boundary_ternary.pgm")
    _dump_json(
        {
            "t": t_used,
            "mu": _round(ternary.mu),
            "sigma": _round(ternary.sigma),
            "score_max": _round(peak),
            "neighborhood": neighborhood,
            "counts": {
                "edge": int((ternary.grid == 1).sum()),
                "interior": int((ternary.grid == 0).sum()),
                "uncertain": int((ternary.grid == -1).sum()),
            },
        },
        out_dir / "boundary_stats.json",
    )


@cli.command("refine")
@click.argument("masks_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("edges_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--beta", type=float, default=8.0, show_default=True)
@click.option("--iters", type=int, default=16, show_default=True)
@click.option("--radius", type=int, default=5, show_default=True)
@click.option("--tau-bgp", type=float, default=0.5, show_default=True)
@click.option("--edge-threshold", type=float, default=0.5, show_default=True)
@click.option(
    "--upscale/--no-upscale",
    default=False,
    show_default=True,
    help="Nearest-neighbour upscale the edge map to the mask resolution.",
)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_refine(
    masks_dir: str,
    edges_path: str,
    beta: float,
    iters: int,
    radius: int,
    tau_bgp: float,
    edge_threshold: float,
    upscale: bool,
    out: str,
) -> None:
    """Refine a mask set inside instance boundaries.

    Masks are cut along edge-separated components, each fragment spreads
    by random walk inside its region, and overlapping results merge.
    """
    mask_arrays, labels, scores = read_mask_set(masks_dir)
    edges = read_mask_pgm(edges_path)
    if np.issubdtype(edges.dtype, np.integer):
        raise ShapeMismatch("edge rasters must be 8-bit soft PGMs")
    masks = MaskSet(masks=mask_arrays, labels=labels, scores=scores)
    out_dir = Path(out)
    if not mask_arrays:
        write_mask_set([], out_dir)
        return
    if upscale:
        h, w = np.asarray(mask_arrays[0]).shape
        edges = upscale_edges(edges, h, w)
    if np.asarray(mask_arrays[0]).shape != edges.shape:
        raise ShapeMismatch(
            f"masks are {np.asarray(mask_arrays[0]).shape}, edges are {edges.shape}"
        )
    params = AffinityParams(beta=beta, iterations=iters, search_radius=radius, tau=tau_bgp)
    params.validate()
    components = connected_components(edges, edge_threshold)
    fragments = split_by_components(masks, components)
    spread = propagate(fragments, edges, params)
    refined = merge_masks(spread, params.tau)
    write_mask_set(refined.masks, out_dir, labels=refined.labels, scores=refined.scores)
    log.info("refined %d masks into %d", len(mask_arrays), len(refined.masks))


def _paired_files(pred_dir: Path, gt_dir: Path, pattern: str) -> list[tuple[Path, Path]]:
    names = sorted(p.name for p in pred_dir.glob(pattern))
    pairs = []
    for name in names:
        gt = gt_dir / name
        if not gt.exists():
            raise ShapeMismatch(f"no ground-truth counterpart for {name}")
        pairs.append((pred_dir / name, gt))
    if not pairs:
        raise ShapeMismatch(f"no files matching {pattern} under {pred_dir}")
    return pairs


def _mask_sample_dirs(pred_dir: Path, gt_dir: Path) -> list[tuple[Path, Path]]:
    if (pred_dir / "index.jsonl").exists():
        return [(pred_dir, gt_dir)]
    names = sorted(p.name for p in pred_dir.iterdir() if p.is_dir())
    pairs = []
    for name in names:
        gt = gt_dir / name
        if not (gt / "index.jsonl").exists():
            raise ShapeMismatch(f"no ground-truth mask set for {name}")
        pairs.append((pred_dir / name, gt))
    if not pairs:
        raise ShapeMismatch(f"no mask sets under {pred_dir}")
    return pairs


@cli.command("eval")
@click.argument("pred_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("gt_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--task", type=click.Choice(["edges", "instances", "panoptic"]), required=True)
@click.option("--tolerance-px", type=int, default=0, show_default=True)
@click.option("--edge-threshold", type=float, default=0.5, show_default=True,
              help="Binarization threshold for topology (clDice) scoring.")
@click.option("--workers", type=int, default=None, help="Worker threads (default: cores).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_eval(
    pred_dir: str,
    gt_dir: str,
    task: str,
    tolerance_px: int,
    edge_threshold: float,
    workers: int | None,
    out: str,
) -> None:
    """Evaluate predictions against ground truth and write a JSON report."""
    pred_root, gt_root = Path(pred_dir), Path(gt_dir)
    n_workers = workers if workers and workers > 0 else logical_cores()
    report: dict = {"task": task}

    if task == "edges":
        pairs = _paired_files(pred_root, gt_root, "*.pgm")

        def one(pair):
            p = read_mask_pgm(pair[0]).astype(np.float64)
            g = read_mask_pgm(pair[1]).astype(np.float64)
            curve = metrics.edge_pr_curve(p, g, tolerance_px)
            cld = metrics.cl_dice(p >= edge_threshold, g)
            return curve, cld

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, pairs))
        curves = [r[0] for r in results]
        report["ods"] = _round(metrics.ods(curves))
        report["ois"] = _round(metrics.ois(curves))
        report["cldice"] = _round(float(np.mean([r[1] for r in results])))
        report["images"] = len(pairs)
    elif task == "instances":
        pairs = _mask_sample_dirs(pred_root, gt_root)

        def one(pair):
            p_masks, p_labels, p_scores = read_mask_set(pair[0])
            g_masks, g_labels, _ = read_mask_set(pair[1])
            return (
                MaskSet(p_masks, labels=p_labels, scores=p_scores),
                MaskSet(g_masks, labels=g_labels),
            )

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            samples = list(pool.map(one, pairs))
        report["ap"] = _round(metrics.average_precision(samples, 0.5))
        report["map_coco"] = _round(metrics.map_coco(samples))
        report["ar100"] = _round(metrics.average_recall(samples, 100))
        report["images"] = len(pairs)
    else:
        pairs = _paired_files(pred_root, gt_root, "*.pgm")

        def one(pair):
            return metrics.panoptic_stats(read_panoptic(pair[0]), read_panoptic(pair[1]))

        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            stats = list(pool.map(one, pairs))
        result = metrics.summarize_panoptic(stats)
        report["pq"] = _round(result.pq)
        report["sq"] = _round(result.sq)
        report["rq"] = _round(result.rq)
        report["pq_things"] = _round(result.pq_things)
        report["pq_stuff"] = _round(result.pq_stuff)
        report["images"] = len(pairs)

    _dump_json(report, Path(out))


@cli.command("synth")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=8, show_default=True, help="Grid side length.")
@click.option(
    "--field",
    "field_kind",
    type=click.Choice(["random", "two-instance"]),
    default="random",
    show_default=True,
)
@click.option("--bound", type=float, default=1.0, show_default=True,
              help="Similarity magnitude bound of the random field.")
@click.option("--contrast", type=float, default=2.0, show_default=True)
@click.option("--split-col", type=int, default=None, help="Defaults to size // 2.")
@click.option("--gamma", type=str, default=None,
              help="Comma-separated schedule values (defaults to smoothstep).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_synth(
    seed: int,
    size: int,
    field_kind: str,
    bound: float,
    contrast: float,
    split_col: int | None,
    gamma: str | None,
    out: str,
) -> None:
    """Write a synthetic attention fixture plus its theory report.

    The report compares the measured per-step divergence against the
    second-order prediction from the schedule and the field's Fisher
    information.
    """
    if gamma is not None:
        values = np.asarray([float(x) for x in gamma.split(",")], dtype=np.float64)
        timesteps = list(range(0, 100 * values.size, 100))
        schedule = GammaSchedule(timesteps=timesteps, values=values)
        schedule.validate()
    else:
        schedule = smoothstep_schedule(DEFAULT_TIMESTEPS)

    if field_kind == "random":
        field = random_similarity_field(size, size, bound=bound, seed=seed)
    else:
        field = synth_two_instance_field(
            size, size, split_col if split_col is not None else size // 2, contrast
        )

    stack = synth_attention(field, schedule)
    reports = kl_second_order_check(field, schedule)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_attention_stack(stack, out_dir / "stack.atns")
    best_measured = max(reports, key=lambda r: r.measured_kl)
    best_predicted = max(reports, key=lambda r: r.predicted_kl)
    _dump_json(
        {
            "seed": seed,
            "size": size,
            "field": field_kind,
            "bound": field.bound,
            "gamma": [_round(g) for g in np.asarray(schedule.values).tolist()],
            "timesteps": list(schedule.timesteps),
            "steps": [
                {
                    "t": r.timestep,
                    "gamma": _round(r.gamma),
                    "delta_gamma": _round(r.delta_gamma),
                    "measured_kl": _round(r.measured_kl),
                    "predicted_kl": _round(r.predicted_kl),
                }
                for r in reports
            ],
            "t_star_measured": best_measured.timestep,
            "t_star_predicted": best_predicted.timestep,
        },
        out_dir / "report.json",
    )


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        return 130
    except (TraceEdgesError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # invariant breach — a bug, not bad input
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
