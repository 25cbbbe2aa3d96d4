import json

import numpy as np
import pytest
import torch
from PIL import Image
from scipy import stats

from coseg.data import (Appearance, DomainStore, SyntheticSpec, UnpairedBatch, epoch_length,
                        load_domain, make_synthetic, render_frame, sample_epoch, split_indices,
                        split_store)


def _write_domain(root, n, size_wh, with_masks=True, seed=0):
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True)
    if with_masks:
        (root / "masks").mkdir()
    w, h = size_wh
    for i in range(n):
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        Image.fromarray(img).save(root / "images" / f"{i:04d}.png")
        if with_masks:
            m = np.zeros((h, w), np.uint8)
            m[h // 4: h // 2, w // 4: w // 2] = 255
            Image.fromarray(m).save(root / "masks" / f"{i:04d}.png")
    return root


def _store(n, size=16, name="X", masks=True):
    images = torch.arange(n, dtype=torch.float32).view(n, 1, 1, 1).expand(n, 3, size, size).clone()
    return DomainStore(name, None, None, images,
                       torch.zeros(n, 1, size, size) if masks else None, [str(i) for i in range(n)])


def test_load_full_resolution_domain(tmp_path):
    root = _write_domain(tmp_path / "dom", 225, (720, 576))
    store = load_domain(root, 256)
    assert store.images.shape == (225, 3, 256, 256)
    assert store.masks.shape == (225, 1, 256, 256)
    assert store.images.dtype == torch.float32
    assert float(store.images.min()) >= -1.0 and float(store.images.max()) <= 1.0
    assert set(torch.unique(store.masks).tolist()) == {0.0, 1.0}


def test_pixel_endpoints_and_mask_binarization(tmp_path):
    root = tmp_path / "d"
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    img = np.zeros((16, 16, 3), np.uint8)
    img[:, 8:] = 255
    Image.fromarray(img).save(root / "images" / "a.png")
    m = np.zeros((16, 16), np.uint8)
    m[:8] = 255
    m[8:, :4] = 100  # below half intensity -> background
    Image.fromarray(m).save(root / "masks" / "a.png")
    s = load_domain(root, 16)
    assert float(s.images[0, :, :, :8].max()) == -1.0
    assert float(s.images[0, :, :, 8:].min()) == 1.0
    assert int(s.masks.sum()) == 8 * 16


def test_round_trip_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
    (tmp_path / "images").mkdir()
    Image.fromarray(img).save(tmp_path / "images" / "x.png")
    s = load_domain(tmp_path, 32, with_masks=False)
    assert np.abs(s.images[0].numpy().transpose(1, 2, 0) - (img / 127.5 - 1)).max() <= 1 / 127.5


def test_resize_is_idempotent_at_target_size(tmp_path):
    _write_domain(tmp_path / "d", 3, (64, 64))
    s1 = load_domain(tmp_path / "d", 64)
    out = tmp_path / "e"
    (out / "images").mkdir(parents=True)
    (out / "masks").mkdir()
    for i in range(3):
        arr = np.round((s1.images[i].numpy().transpose(1, 2, 0) + 1) * 127.5).astype(np.uint8)
        Image.fromarray(arr).save(out / "images" / f"{i}.png")
        Image.fromarray((s1.masks[i, 0].numpy() * 255).astype(np.uint8)).save(out / "masks" / f"{i}.png")
    s2 = load_domain(out, 64)
    assert torch.allclose(s1.images, s2.images, atol=1e-6)
    assert torch.equal(s1.masks, s2.masks)


def test_missing_mask_names_the_file(tmp_path):
    root = _write_domain(tmp_path / "d", 3, (32, 32))
    (root / "masks" / "0001.png").unlink()
    with pytest.raises(FileNotFoundError, match="0001"):
        load_domain(root, 32)


def test_mask_size_mismatch(tmp_path):
    root = _write_domain(tmp_path / "d", 2, (32, 32))
    Image.fromarray(np.zeros((16, 16), np.uint8)).save(root / "masks" / "0000.png")
    with pytest.raises(ValueError, match="differs"):
        load_domain(root, 32)


def test_corrupt_image(tmp_path):
    root = _write_domain(tmp_path / "d", 2, (32, 32))
    (root / "images" / "0000.png").write_bytes(b"not a png")
    with pytest.raises(ValueError, match="decode"):
        load_domain(root, 32)


def test_empty_and_missing_dirs(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_domain(tmp_path / "nothing", 32)
    (tmp_path / "e" / "images").mkdir(parents=True)
    with pytest.raises(ValueError, match="empty"):
        load_domain(tmp_path / "e", 32)


def test_unlabelled_domain_loads_without_masks(tmp_path):
    root = _write_domain(tmp_path / "d", 2, (32, 32), with_masks=False)
    s = load_domain(root, 32, with_masks=False)
    assert not s.has_masks


def test_split_is_contiguous_and_complete():
    tr, va, te = split_indices(200)
    assert (len(tr), len(va), len(te)) == (160, 20, 20)
    assert list(tr) + list(va) + list(te) == list(range(200))
    parts = split_store(_store(10))
    assert [p.stems for p in parts] == [[str(i) for i in range(8)], ["8"], ["9"]]


@pytest.mark.parametrize("n_a,n_b,batch", [(20, 12, 4), (12, 20, 4), (10, 10, 3), (7, 30, 8)])
def test_sample_epoch_arithmetic(n_a, n_b, batch):
    batches = list(sample_epoch(_store(n_a), _store(n_b, masks=False), batch, seed=0))
    assert len(batches) == epoch_length(n_a, n_b, batch) == -(-max(n_a, n_b) // batch)
    assert all(b.x_a.shape[0] == batch and b.x_b.shape[0] == batch for b in batches)
    # the larger domain is covered completely
    big, key = (n_a, "x_a") if n_a >= n_b else (n_b, "x_b")
    seen = torch.cat([getattr(b, key)[:, 0, 0, 0] for b in batches]).long().tolist()
    assert set(seen) == set(range(big))


def test_sample_epoch_deterministic_and_seed_sensitive():
    a, b = _store(20), _store(13, masks=False)

    def order(seed):
        return [(bt.x_a[:, 0, 0, 0].tolist(), bt.x_b[:, 0, 0, 0].tolist()) for bt in sample_epoch(a, b, 4, seed)]

    assert order(5) == order(5)
    assert order(5) != order(6)


def test_sample_epoch_errors():
    with pytest.raises(ValueError):
        list(sample_epoch(_store(4), _store(5, masks=False), 6, 0))
    with pytest.raises(ValueError, match="no masks"):
        list(sample_epoch(_store(4, masks=False), _store(5), 2, 0))


def test_batches_carry_no_domain_b_labels():
    assert UnpairedBatch._fields == ("x_a", "y_a", "x_b")
    b = next(sample_epoch(_store(8), _store(8), 4, 0))
    assert b.y_a.shape == (4, 1, 16, 16)


def test_make_synthetic_layout_and_manifest(tmp_path):
    spec = SyntheticSpec(n_frames=6, image_size=32)
    a, b = make_synthetic(spec, tmp_path, seed=1)
    for dom in ("A", "B"):
        assert len(list((tmp_path / dom / "images").glob("*.png"))) == 6
        assert len(list((tmp_path / dom / "masks").glob("*.png"))) == 6
        with Image.open(tmp_path / dom / "images" / "00000.png") as im:
            assert im.size == (32, 32)
    assert a.images.shape == b.images.shape == (6, 3, 32, 32)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["spec"]["n_frames"] == 6


def test_make_synthetic_is_byte_reproducible(tmp_path):
    spec = SyntheticSpec(n_frames=3, image_size=32)
    make_synthetic(spec, tmp_path / "r1", seed=4)
    make_synthetic(spec, tmp_path / "r2", seed=4)
    for f in sorted((tmp_path / "r1").rglob("*.png")):
        assert f.read_bytes() == (tmp_path / "r2" / f.relative_to(tmp_path / "r1")).read_bytes()


def test_foreground_fraction_in_range():
    spec = SyntheticSpec(image_size=64)
    for i in range(40):
        _, mask = render_frame(spec, spec.domain_a, np.random.default_rng([0, 0, i]), 0)
        frac = mask.mean()
        assert spec.fg_range[0] <= frac <= spec.fg_range[1]


def test_zero_appearance_shift_gives_same_intensity_distribution():
    spec = SyntheticSpec(image_size=64, domain_b=Appearance())
    a = np.concatenate([render_frame(spec, spec.domain_a, np.random.default_rng([7, 0, i]), 0)[0].mean(-1).ravel()
                        for i in range(30)])
    b = np.concatenate([render_frame(spec, spec.domain_b, np.random.default_rng([7, 1, i]), 0)[0].mean(-1).ravel()
                        for i in range(30)])
    rs = np.random.default_rng(0)
    # pixels within a frame are correlated; compare a thinned sample
    p = stats.ks_2samp(rs.choice(a, 400, replace=False), rs.choice(b, 400, replace=False)).pvalue
    assert p > 0.01


def test_default_appearance_shift_is_detectable():
    spec = SyntheticSpec(image_size=64)
    a = np.stack([render_frame(spec, spec.domain_a, np.random.default_rng([7, 0, i]), 0)[0] for i in range(10)])
    b = np.stack([render_frame(spec, spec.domain_b, np.random.default_rng([7, 1, i]), 1)[0] for i in range(10)])
    assert np.abs(a.mean(axis=(0, 1, 2)) - b.mean(axis=(0, 1, 2))).max() > 0.05


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(shapes=("star",))
    with pytest.raises(ValueError):
        SyntheticSpec(image_size=40)
