import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coseg.baseline import run_baseline_decoupled
from coseg.data import DomainStore
from coseg.evaluation import (DICE_EPS, EvalReport, delta_dice, dice, emit_report,
                              evaluate_segmenter, results_csv)
from coseg.nets import SegmenterSpec, UNetSegmenter, param_count
from coseg.train import TrainState, describe_checkpoint, load_checkpoint
from tests.helpers import FixedSeg, micro_config


def dice_oracle(pred, truth):
    """Pixel counting, one frame."""
    inter = p_sum = t_sum = 0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        p, t = int(p >= 0.5), int(t >= 0.5)
        inter += p * t
        p_sum += p
        t_sum += t
    return (2 * inter + DICE_EPS) / (p_sum + t_sum + DICE_EPS)


def test_dice_reference_cases():
    m = np.zeros((1, 8, 8))
    m[0, :4] = 1
    assert dice(m, m)[0] == pytest.approx(1.0, abs=1e-12)
    assert dice(m, 1 - m)[0] < 1e-6
    half = np.zeros((1, 8, 8))
    half[0, :2] = 1  # prediction covers half of the truth
    assert dice(half, m)[0] == pytest.approx(2 / 3, abs=1e-6)


def test_dice_matches_pixel_oracle(rng):
    for _ in range(100):
        p = rng.random((1, 16, 16))
        t = (rng.random((1, 16, 16)) < rng.random()).astype(float)
        assert abs(dice(p, t)[0] - dice_oracle(p, t)) < 1e-9


def test_dice_empty_on_empty_is_one():
    z = np.zeros((2, 4, 4))
    assert np.allclose(dice(z, z), 1.0)


@settings(max_examples=80, deadline=None)
@given(arrays(np.bool_, (2, 6, 6)), arrays(np.bool_, (2, 6, 6)))
def test_dice_symmetric_and_bounded(a, b):
    a, b = a.astype(float), b.astype(float)
    d1, d2 = dice(a, b), dice(b, a)
    assert np.allclose(d1, d2, atol=1e-12)
    assert np.all((d1 >= 0) & (d1 <= 1 + 1e-12))


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


@pytest.mark.parametrize("a,b,expected", [(0.937, 0.928, 0.009), (0.923, 0.478, 0.445)])
def test_delta_dice_reference_values(a, b, expected):
    assert abs(delta_dice(a, b) - expected) < 1e-12


def _store(masks, name):
    n = masks.shape[0]
    return DomainStore(name, None, None, torch.zeros(n, 3, 32, 32), masks, [f"{i:03d}" for i in range(n)])


def test_evaluate_perfect_and_empty_segmenters():
    g = torch.Generator().manual_seed(0)
    masks = (torch.rand(4, 1, 32, 32, generator=g) < 0.3).float()
    a, b = _store(masks, "A"), _store(masks, "B")
    perfect = evaluate_segmenter(FixedSeg(masks), a, b, "stub")
    assert perfect.dice_a == pytest.approx(1.0) and perfect.dice_b == pytest.approx(1.0)
    assert perfect.delta_dice == pytest.approx(0.0)
    blank = evaluate_segmenter(FixedSeg(torch.zeros_like(masks)), a, b, "stub")
    assert blank.dice_a < 1e-6


def test_evaluate_requires_domain_b_masks():
    masks = torch.ones(2, 1, 32, 32)
    b = DomainStore("B", None, None, torch.zeros(2, 3, 32, 32), None, ["0", "1"])
    with pytest.raises(ValueError, match="no masks"):
        evaluate_segmenter(FixedSeg(masks), _store(masks, "A"), b, "stub")


def _report(method, da, db):
    return EvalReport("1", "A", "B", method, [da], [db])


def test_emit_report_files(tmp_path):
    g = torch.Generator().manual_seed(1)
    masks = (torch.rand(3, 1, 32, 32, generator=g) < 0.3).float()
    a, b = _store(masks, "A"), _store(masks, "B")
    reports = [evaluate_segmenter(FixedSeg(masks), a, b, m, n_samples=2)
               for m in ("coSegGAN", "coSegGAN--", "baseline_decoupled")]
    paths = emit_report(reports, tmp_path / "r1")
    lines = paths["csv"].read_text().splitlines()
    assert lines[0] == "method,case,domain_a,domain_b,dice_a,dice_b,delta_dice"
    assert len(lines) == 4
    assert len(list(paths["overlays"].glob("*.png"))) == 3 * 2 * 2
    again = emit_report(reports, tmp_path / "r2")
    assert paths["csv"].read_bytes() == again["csv"].read_bytes()
    assert "Dice B" in paths["table"].read_text()


def test_results_csv_rounds_to_four_places():
    text = results_csv([_report("m", 0.93712, 0.92849)])
    assert text.splitlines()[1].endswith("0.9371,0.9285,0.0086")


def test_baseline_two_stage_contract(tiny_synthetic, tmp_path):
    cfg = micro_config(epochs=1, checkpoint_dir=str(tmp_path / "bl"))
    best = run_baseline_decoupled(cfg, tiny_synthetic["a_train"], tiny_synthetic["b_train"],
                                  tiny_synthetic["a_val"], translation_epochs=1)
    stage1 = load_checkpoint(tmp_path / "bl" / "translator.pt")
    assert "seg" not in stage1.nets
    assert stage1.cfg.weights.lambda3 == 0.0
    final = describe_checkpoint(best)
    assert final["method"] == "baseline_decoupled"
    # stage 2 sees the originals plus one translation of each: 2N images
    n = tiny_synthetic["a_train"].frame_count
    steps = [line for line in (tmp_path / "bl" / "metrics.csv").read_text().splitlines() if ",S," in line]
    assert len(steps) == -(-2 * n // cfg.batch)
    # same segmenter architecture as the joint method
    joint = TrainState.create(cfg)
    assert param_count(load_checkpoint(best).nets["seg"]) == param_count(joint.seg)
    assert param_count(joint.seg) == param_count(UNetSegmenter(SegmenterSpec(32, cfg.seg_filters)))
