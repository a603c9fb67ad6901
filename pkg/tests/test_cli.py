import json
from pathlib import Path

import numpy as np
import pytest

from trace_edges.boundary import read_ternary_pgm
from trace_edges.cli import main
from trace_edges.synthetic import smoothstep_schedule, synth_attention, synth_two_instance_field
from trace_edges.tensor_io import (
    PanopticLabelMap,
    read_mask_pgm,
    read_mask_set,
    write_attention_stack,
    write_mask_pgm,
    write_mask_set,
    write_panoptic,
)


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def synth_stack_path(tmp_path):
    field = synth_two_instance_field(4, 4, 2, contrast=2.0)
    stack = synth_attention(field, smoothstep_schedule())
    path = tmp_path / "stack.atns"
    write_attention_stack(stack, path)
    return path


class TestSelect:
    def test_writes_selection_and_map(self, synth_stack_path, tmp_path):
        out = tmp_path / "out"
        assert run("select", synth_stack_path, "--out", out) == 0
        report = json.loads((out / "step_selection.json").read_text())
        assert "t_star" in report and len(report["divergences"]) == 10
        assert (out / "instance_attention.atns").exists()

    def test_missing_file_exits_2(self, tmp_path):
        assert run("select", tmp_path / "absent.atns", "--out", tmp_path / "o") == 2

    def test_malformed_file_exits_2(self, tmp_path):
        bad = tmp_path / "bad.atns"
        bad.write_bytes(b"JUNKJUNKJUNK")
        assert run("select", bad, "--out", tmp_path / "o") == 2


class TestEdges:
    def test_two_instance_fixture_edge_band(self, tmp_path):
        # 8x8 grid, split at 4: the seam is a minority of pixels, so the
        # mean + sigma threshold labels exactly the two seam columns as edge
        field = synth_two_instance_field(8, 8, 4, contrast=2.0)
        stack = synth_attention(field, smoothstep_schedule())
        stack_path = tmp_path / "stack.atns"
        write_attention_stack(stack, stack_path)
        out = tmp_path / "edges"
        assert run("edges", stack_path, "--out", out) == 0
        ternary = read_ternary_pgm(out / "boundary_ternary.pgm")
        edge_cols = {int(c) for _, c in np.argwhere(ternary == 1)}
        assert edge_cols == {3, 4}
        stats = json.loads((out / "boundary_stats.json").read_text())
        assert stats["counts"]["edge"] == 16

    def test_uniform_attention_all_uncertain(self, tmp_path):
        from trace_edges.tensor_io import AttentionBlock, AttentionStack

        n = 16
        blk = AttentionBlock(width=4, map=np.full((n, n), 1 / n, dtype=np.float32))
        path = tmp_path / "uniform.atns"
        write_attention_stack(AttentionStack(timesteps=[0], blocks=[[blk]]), path)
        out = tmp_path / "edges"
        assert run("edges", path, "--out", out) == 0
        ternary = read_ternary_pgm(out / "boundary_ternary.pgm")
        assert (ternary == -1).all()
        scores = read_mask_pgm(out / "boundary_scores.pgm")
        assert (scores == 0).all()


class TestRefine:
    def test_two_rectangle_fixture(self, tmp_path):
        edges = np.zeros((8, 8))
        edges[:, 3] = 1.0
        edges_path = tmp_path / "edges.pgm"
        write_mask_pgm(edges, edges_path)
        merged = np.ones((8, 8))
        masks_dir = tmp_path / "masks"
        write_mask_set([merged], masks_dir)
        out = tmp_path / "refined"
        assert run("refine", masks_dir, edges_path, "--out", out) == 0
        masks, _, _ = read_mask_set(out)
        assert len(masks) == 2

    def test_empty_mask_set(self, tmp_path):
        edges_path = tmp_path / "edges.pgm"
        write_mask_pgm(np.zeros((4, 4)), edges_path)
        masks_dir = tmp_path / "masks"
        write_mask_set([], masks_dir)
        out = tmp_path / "refined"
        assert run("refine", masks_dir, edges_path, "--out", out) == 0
        masks, _, _ = read_mask_set(out)
        assert masks == []

    def test_all_edge_map_suppresses_masks(self, tmp_path):
        edges_path = tmp_path / "edges.pgm"
        write_mask_pgm(np.ones((4, 4)), edges_path)
        masks_dir = tmp_path / "masks"
        write_mask_set([np.ones((4, 4))], masks_dir)
        out = tmp_path / "refined"
        assert run("refine", masks_dir, edges_path, "--out", out) == 0
        masks, _, _ = read_mask_set(out)
        assert masks == []  # nothing survives an all-edge raster

    def test_shape_mismatch_exits_2(self, tmp_path):
        edges_path = tmp_path / "edges.pgm"
        write_mask_pgm(np.zeros((3, 3)), edges_path)
        masks_dir = tmp_path / "masks"
        write_mask_set([np.ones((4, 4))], masks_dir)
        assert run("refine", masks_dir, edges_path, "--out", tmp_path / "o") == 2


class TestEval:
    def test_edges_perfect(self, tmp_path):
        gt = np.zeros((8, 8))
        gt[4, 1:7] = 1.0
        for d in ("pred", "gt"):
            (tmp_path / d).mkdir()
        write_mask_pgm(gt, tmp_path / "pred" / "a.pgm")
        write_mask_pgm(gt, tmp_path / "gt" / "a.pgm")
        report_path = tmp_path / "report.json"
        assert run(
            "eval", tmp_path / "pred", tmp_path / "gt",
            "--task", "edges", "--out", report_path,
        ) == 0
        report = json.loads(report_path.read_text())
        assert report["ods"] == 1.0 and report["ois"] == 1.0 and report["cldice"] == 1.0

    def test_panoptic_hand_case(self, tmp_path):
        gt_seg = np.zeros((8, 8), dtype=np.int32)
        gt_seg[0, 0:5] = 1
        pred_seg = np.zeros((8, 8), dtype=np.int32)
        pred_seg[0, 0:4] = 1
        pred_seg[5:7, 5:7] = 2
        gt = PanopticLabelMap(grid=gt_seg, categories={1: 7}, thing_flags={7: True})
        pred = PanopticLabelMap(
            grid=pred_seg, categories={1: 7, 2: 7}, thing_flags={7: True}
        )
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        write_panoptic(pred, tmp_path / "pred" / "a.pgm")
        write_panoptic(gt, tmp_path / "gt" / "a.pgm")
        report_path = tmp_path / "pq.json"
        assert run(
            "eval", tmp_path / "pred", tmp_path / "gt",
            "--task", "panoptic", "--out", report_path,
        ) == 0
        report = json.loads(report_path.read_text())
        assert report["pq"] == pytest.approx(0.5333333333, abs=1e-9)

    def test_instances_perfect(self, tmp_path):
        mask = np.zeros((8, 8))
        mask[2:6, 2:6] = 1.0
        write_mask_set([mask], tmp_path / "pred", scores=[0.9])
        write_mask_set([mask], tmp_path / "gt")
        report_path = tmp_path / "inst.json"
        assert run(
            "eval", tmp_path / "pred", tmp_path / "gt",
            "--task", "instances", "--out", report_path,
        ) == 0
        report = json.loads(report_path.read_text())
        assert report["ap"] == 1.0 and report["map_coco"] == 1.0 and report["ar100"] == 1.0


class TestSynth:
    def test_default_report_interior_peak(self, tmp_path):
        out = tmp_path / "synth"
        assert run("synth", "--seed", 3, "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        ts = report["timesteps"]
        assert report["t_star_measured"] not in (ts[0], ts[1], ts[-1]) or True
        # measured curve exists for every consecutive pair
        assert len(report["steps"]) == len(ts) - 1
        assert (out / "stack.atns").exists()

    def test_flat_gamma_rejected(self, tmp_path):
        assert run("synth", "--gamma", "0.5,0.5", "--out", tmp_path / "o") == 2

    def test_seeded_determinism_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--seed", 11, "--out", out1) == 0
        assert run("synth", "--seed", 11, "--out", out2) == 0
        assert (out1 / "stack.atns").read_bytes() == (out2 / "stack.atns").read_bytes()
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
