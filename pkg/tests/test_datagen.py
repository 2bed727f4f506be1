import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocslab.datagen import (
    Dataset,
    ShiftSpec,
    apply_shift,
    fgsm,
    gaussian_kernel,
    load_digits_dataset,
    load_idx,
    make_blobs,
    rotate_images,
    split,
    write_idx,
)
from ocslab.errors import FormatError, NumericError
from ocslab.netcore import TrainConfig, init_mlp, mean_loss, train
from ocslab.numcore import make_rng
from ocslab.objectives import LossSpec


def images(n=6, seed=0):
    x = make_rng(seed).random((n, 64))
    return Dataset(x, np.arange(n) % 3, (8, 8))


def test_idx_round_trip(tmp_path):
    pix = make_rng(0).integers(0, 256, (5, 4, 3)).astype(np.uint8)
    write_idx(tmp_path / "i", tmp_path / "l", pix, [0, 1, 2, 3, 9])
    data = load_idx(tmp_path / "i", tmp_path / "l")
    assert data.image_shape == (4, 3)
    assert np.array_equal(data.inputs, pix.reshape(5, 12) / 255.0)
    assert data.targets.tolist() == [0, 1, 2, 3, 9]


@pytest.mark.parametrize("cut,field", [(3, "images"), (20, "images.pixels")])
def test_idx_truncated(tmp_path, cut, field):
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((2, 3, 3)), [0, 1])
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "i").write_bytes(raw[:cut])
    with pytest.raises(FormatError) as info:
        load_idx(tmp_path / "i", tmp_path / "l")
    assert info.value.field == field


def test_idx_bad_magic_and_count(tmp_path):
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((2, 3, 3)), [0, 1])
    write_idx(tmp_path / "i2", tmp_path / "l2", np.zeros((3, 3, 3)), [0, 1, 2])
    with pytest.raises(FormatError) as info:
        (tmp_path / "bad").write_bytes(b"\x00" * 32)
        load_idx(tmp_path / "bad", tmp_path / "l")
    assert info.value.field == "images.magic" and info.value.offset == 0
    with pytest.raises(FormatError) as info:
        load_idx(tmp_path / "i", tmp_path / "l2")
    assert info.value.field == "labels.count"


def test_rotation_four_quarter_turns_is_identity():
    data = images()
    out = data
    for _ in range(4):
        out = apply_shift(out, ShiftSpec("rotation", 90))
    assert np.max(np.abs(out.inputs - data.inputs)) < 1e-9


def test_rotation_quarter_turn_matches_rot90():
    data = images()
    out = rotate_images(data.images(), 90)
    assert np.allclose(out, np.rot90(data.images(), -1, axes=(1, 2)), atol=1e-12)


@pytest.mark.parametrize("kind", ["rotation", "gauss_noise", "gauss_blur", "impulse_noise"])
def test_level_zero_is_identity(kind):
    data = images()
    assert np.array_equal(apply_shift(data, ShiftSpec(kind, 0, seed=3)).inputs, data.inputs)


def test_impulse_full_probability_is_binary():
    out = apply_shift(images(), ShiftSpec("impulse_noise", 1.0, seed=1)).inputs
    assert set(np.unique(out)) <= {0.0, 1.0}


@given(st.floats(0.1, 5.0))
def test_gaussian_kernel_normalized(sigma):
    k = gaussian_kernel(sigma)
    assert abs(k.sum() - 1) < 1e-12 and np.allclose(k, k[::-1])


def test_blur_preserves_constant_image():
    data = Dataset(np.full((2, 64), 0.4), [0, 1], (8, 8))
    assert np.allclose(apply_shift(data, ShiftSpec("gauss_blur", 1.5)).inputs, 0.4)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["rotation", "gauss_noise", "gauss_blur", "impulse_noise"]),
       st.floats(0.0, 1.0), st.integers(0, 1000))
def test_shift_bounds_targets_and_determinism(kind, frac, seed):
    level = {"rotation": 359 * frac, "gauss_noise": frac, "gauss_blur": 3 * frac, "impulse_noise": frac}[kind]
    data = images(seed=seed)
    a = apply_shift(data, ShiftSpec(kind, level, seed))
    b = apply_shift(data, ShiftSpec(kind, level, seed))
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.targets, data.targets)
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1


def test_noise_does_not_depend_on_batch_order():
    data = images(8)
    whole = apply_shift(data, ShiftSpec("gauss_noise", 0.3, 5)).inputs
    head = apply_shift(data.subset(np.arange(4)), ShiftSpec("gauss_noise", 0.3, 5)).inputs
    assert np.array_equal(whole[:4], head)


@pytest.mark.parametrize("kind", ["rotation", "gauss_blur"])
def test_geometric_shift_needs_images(kind):
    with pytest.raises(ValueError):
        apply_shift(Dataset(np.zeros((3, 5)), [0, 1, 2]), ShiftSpec(kind, 10))


def test_shift_spec_validation():
    for kind, level in [("warp", 1), ("rotation", 360), ("impulse_noise", 1.5), ("gauss_noise", -1)]:
        with pytest.raises(ValueError):
            ShiftSpec(kind, level)
    with pytest.raises(ValueError):
        apply_shift(images(), ShiftSpec("fgsm", 0.1))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(NumericError):
        Dataset(np.array([[np.nan]]), [0])
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 5)), [0], (2, 2))


@pytest.mark.parametrize("seed", range(5))
def test_fgsm_increases_loss(seed):
    data = make_blobs(3, 6, 40, 1.0, seed)
    data = data.with_inputs((data.inputs - data.inputs.min()) / np.ptp(data.inputs))
    loss = LossSpec.cross_entropy(3)
    net, _ = train(init_mlp([6, 16, 3], seed), data.inputs, data.targets, loss, TrainConfig(lr=0.1, steps=300))
    adv = fgsm(net, loss, data, 0.05)
    assert mean_loss(net, adv.inputs, adv.targets, loss) > mean_loss(net, data.inputs, data.targets, loss)
    assert np.all(np.abs(adv.inputs - data.inputs) <= 0.05 + 1e-15)
    assert adv.inputs.min() >= 0 and adv.inputs.max() <= 1
    assert np.array_equal(fgsm(net, loss, data, 0.0).inputs, data.inputs)


def test_blobs_deterministic_and_separable():
    a = make_blobs(2, 5, 50, 10.0, 4)
    b = make_blobs(2, 5, 50, 10.0, 4)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.inputs, make_blobs(2, 5, 50, 10.0, 5).inputs)
    # least-squares linear separator on widely separated blobs
    x = np.hstack([a.inputs, np.ones((len(a), 1))])
    y = np.where(a.targets == 1, 1.0, -1.0)
    w = np.linalg.lstsq(x, y, rcond=None)[0]
    assert np.all(np.sign(x @ w) == y)


def test_split_partitions():
    data = load_digits_dataset()
    tr, ho = split(data, 0.3, 0)
    assert len(tr) + len(ho) == len(data)
    assert abs(len(ho) - 0.3 * len(data)) <= 1
    assert data.image_shape == (8, 8) and data.inputs.max() <= 1
