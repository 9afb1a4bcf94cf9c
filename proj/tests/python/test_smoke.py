import json

import numpy as np
import pytest

import roadprompt


def brute_labels(mask, points, lh, lw):
    keep = np.zeros_like(mask, dtype=bool)
    for r, c in points:
        keep[(r // lh) * lh:(r // lh + 1) * lh, (c // lw) * lw:(c // lw + 1) * lw] = True
    return mask & keep, mask & ~keep


def test_render_is_deterministic():
    img, mask = roadprompt.render_synthetic(3, size=64, seed=1)
    img2, mask2 = roadprompt.render_synthetic(3, size=64, seed=1)
    assert img.shape == (64, 64, 3) and img.dtype == np.uint8
    assert mask.shape == (64, 64) and mask.dtype == bool
    assert np.array_equal(img, img2) and np.array_equal(mask, mask2)
    assert mask.any()


def test_labels_match_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mask = rng.random((50, 70)) < 0.4
        pts = [tuple(int(v) for v in rng.integers(0, [50, 70])) for _ in range(4)]
        pos, neg = brute_labels(mask, pts, 16, 24)
        assert np.array_equal(roadprompt.make_positive_label(mask, pts, 16, 24), pos)
        assert np.array_equal(roadprompt.make_negative_label(mask, pts, 16, 24), neg)


def test_morphology_matches_sliding_window():
    rng = np.random.default_rng(1)
    mask = rng.random((30, 41)) < 0.6
    k = 3
    padded = np.pad(mask, 1, constant_values=False)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    assert np.array_equal(roadprompt.erode(mask, k), windows.all(axis=(2, 3)))
    assert np.array_equal(roadprompt.dilate(mask, k), windows.any(axis=(2, 3)))
    opened = roadprompt.opening(mask, 5)
    assert np.array_equal(roadprompt.opening(opened, 5), opened)


def test_losses_and_metrics():
    rng = np.random.default_rng(2)
    target = rng.random((8, 8)) < 0.5
    logits = rng.normal(size=64).astype(np.float32)
    value, grad = roadprompt.head_loss(logits, target)
    assert value > 0 and grad.shape == (64,)
    _, g = roadprompt.negative_region_loss(logits, target, np.zeros_like(target))
    assert np.all(g[~target.ravel()] == 0)
    m = roadprompt.metrics(np.array([[1, 1, 1, 0]]), np.array([[1, 1, 0, 1]]))
    assert m["iou"] == pytest.approx(50.0)
    with pytest.raises(ValueError):
        roadprompt.metrics(np.zeros((2, 2)), np.zeros((2, 3)))


def test_prompt_generation_and_sampling():
    truth = np.zeros((64, 64), dtype=bool)
    truth[10:20, 10:30] = True
    pred = np.zeros_like(truth)
    pos, neg = roadprompt.generate_prompts(pred, truth, 3, 7, 1, 32)
    assert len(pos) == 1 and neg == []
    assert truth[pos[0]]
    p, n = roadprompt.sample_prompts(truth, seed=4)
    assert all(truth[q] for q in p + n)


def test_model_sessions_and_training(tmp_path):
    data = tmp_path / "data"
    splits = roadprompt.generate_synthetic(data, count=10, size=32, seed=0)
    assert splits == {"train": 8, "val": 1, "test": 1}
    cfg = json.dumps({"epochs": 1, "batch_size": 2, "patch_h": 16, "patch_w": 16, "lr_decoders": 1e-3,
                      "lr_prompted": 1e-3})
    result = roadprompt.train(data, tmp_path / "run", cfg, max_train=4)
    assert len(result["epochs"]) == 1

    model = roadprompt.Model.load(result["last_checkpoint"])
    img, mask = roadprompt.render_synthetic(0, size=32)
    out = model.segment(img)
    assert np.array_equal(out["final"], out["auto"])
    out = model.segment(img, positives=[(3, 3)], negatives=[(20, 20)])
    assert set(out) >= {"auto", "highrecall", "stage2", "stage3", "final"}

    report = roadprompt.simulate(model, data, split="test")
    assert report["images"] == 1
    rows = roadprompt.sweep(model, data)
    assert len(rows) == 12

    store = roadprompt.SessionStore(model)
    runs = model.encoder_invocations
    sid = store.create(img)
    first = store.refine(sid, positives=[(1, 1)])
    store.refine(sid, negatives=[(30, 30)])
    back = store.undo(sid)
    assert np.array_equal(back["final"], first["final"])
    assert model.encoder_invocations == runs + 1
    assert store.encoder_runs(sid) == 1
    with pytest.raises(ValueError):
        store.refine(sid, positives=[(99, 0)])
    with pytest.raises(KeyError):
        store.undo("0" * 32)
