import struct

import numpy as np
import pytest
from PIL import Image

from csc_ctrl import data as D
from csc_ctrl.csc import FistaConfig, fista_encode


def test_synthetic_is_deterministic_and_in_range():
    model = D.SyntheticModel.random("toy", seed=3)
    a, ca = D.sample_synthetic(model, 16, seed=4)
    b, cb = D.sample_synthetic(model, 16, seed=4)
    c, _ = D.sample_synthetic(model, 16, seed=5)
    assert a.images.tobytes() == b.images.tobytes() and ca.tobytes() == cb.tobytes()
    assert not np.array_equal(a.images, c.images)
    assert a.images.shape == (16, 3, 16, 16) and np.abs(a.images).max() <= 1.0


def test_code_density_within_binomial_band():
    model = D.SyntheticModel.random("toy", seed=0, density=0.02)
    _, codes = D.sample_synthetic(model, 64, seed=1)
    n = codes.size
    sd = np.sqrt(n * 0.02 * 0.98)
    assert abs(np.count_nonzero(codes) - 0.02 * n) <= 3 * sd


def test_zero_density_gives_noise_only():
    model = D.SyntheticModel.random("toy", seed=0, density=0.0, noise_std=0.05)
    ds, codes = D.sample_synthetic(model, 8, seed=2)
    assert not codes.any()
    assert abs(ds.images.std() - 0.05) < 0.005


def test_support_recovery_with_known_dictionary():
    spec_model = D.SyntheticModel.random("toy", seed=11, density=0.02, noise_std=0.0)
    d = spec_model.network.dictionaries[0]
    # the toy decoder ends in tanh; invert it to get the linear synthesis
    ds, codes = D.sample_synthetic(spec_model, 16, seed=12)
    x = np.arctanh(np.clip(ds.images, -1 + 1e-12, 1 - 1e-12))
    truth = codes.reshape(16, 32, 8, 8) != 0
    best = 0.0
    for lam in (0.01, 0.03, 0.1, 0.3):
        z = fista_encode(x, d, FistaConfig(lam, 500))
        est = z != 0
        tp = np.sum(est & truth)
        f1 = 2 * tp / (est.sum() + truth.sum())
        best = max(best, f1)
    assert best >= 0.95


def test_cifar_reader(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(10, 3, 32, 32), dtype=np.uint8)
    pixels[0, 0, 0, 0], pixels[0, 0, 0, 1] = 255, 0
    labels = rng.integers(0, 10, size=10)
    # record layout written by hand: label byte then 3072 channel-major bytes
    raw = b"".join(bytes([int(labels[i])]) + pixels[i].tobytes() for i in range(10))
    (tmp_path / "b.bin").write_bytes(raw)
    ds = D.load_cifar10(tmp_path / "b.bin")
    assert ds.images.shape == (10, 3, 32, 32)
    assert ds.images[0, 0, 0, 0] == 1.0 and ds.images[0, 0, 0, 1] == -1.0
    np.testing.assert_array_equal(ds.labels, labels)
    np.testing.assert_array_equal(ds.images, pixels / 127.5 - 1.0)
    D.write_cifar10(tmp_path / "c.bin", pixels, labels)
    assert (tmp_path / "c.bin").read_bytes() == raw


def test_cifar_reader_rejects_truncation(tmp_path):
    (tmp_path / "t.bin").write_bytes(b"\x00" * 3000)
    with pytest.raises(D.FormatError):
        D.load_cifar10(tmp_path / "t.bin")


def test_downscale_averages_blocks():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(D.downscale2x(x)[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_noise_identity_moments_and_clip():
    clean = np.zeros((4, 3, 32, 32))
    assert np.array_equal(D.add_gaussian_noise(clean, 0.0, 1), clean)
    raw = D.add_gaussian_noise(clean, 0.3, 1, clip=False)
    assert abs(raw.std() - 0.3) <= 0.02 * 0.3
    assert np.array_equal(raw, D.add_gaussian_noise(clean, 0.3, 1, clip=False))
    clipped = D.add_gaussian_noise(clean + 0.9, 0.5, 2)
    assert clipped.min() >= -1 and clipped.max() <= 1
    with pytest.raises(ValueError):
        D.add_gaussian_noise(clean, -0.1, 0)


def test_tensor_round_trip_and_header(tmp_path, rng):
    for arr in (rng.normal(size=(3, 32, 32)), rng.normal(size=(5,)).astype(np.float32),
                rng.integers(0, 255, size=(2, 3), dtype=np.uint8), rng.integers(-9, 9, size=(4, 1, 2))):
        D.save_tensor(tmp_path / "t.csct", arr)
        back = D.load_tensor(tmp_path / "t.csct")
        assert back.dtype == arr.dtype and back.shape == arr.shape and back.tobytes() == arr.tobytes()
    D.save_tensor(tmp_path / "h.csct", np.zeros((3, 32, 32)))
    raw = (tmp_path / "h.csct").read_bytes()
    assert len(raw) - 3 * 32 * 32 * 8 == 40
    assert raw[:4] == b"CSCT" and struct.unpack_from("<III", raw, 4) == (1, 1, 3)


def test_tensor_errors(tmp_path):
    with pytest.raises(D.FormatError):
        D.save_tensor(tmp_path / "e.csct", np.zeros((0, 3)))
    good = tmp_path / "g.csct"
    D.save_tensor(good, np.ones((2, 2)))
    raw = good.read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:4] + struct.pack("<I", 9) + raw[8:], raw[:-1],
                raw[:16] + struct.pack("<Q", 2**62) + raw[24:]):
        (tmp_path / "b.csct").write_bytes(bad)
        with pytest.raises(D.FormatError):
            D.load_tensor(tmp_path / "b.csct")


def test_ppm_grid(tmp_path):
    white = np.ones((1, 3, 32, 32))
    canvas = D.write_image_grid(white, tmp_path / "w.ppm")
    assert canvas.shape == (32, 32, 3) and (canvas == 255).all()
    tiles = np.random.default_rng(0).uniform(-1, 1, size=(5, 3, 32, 32))
    canvas = D.write_image_grid(tiles, tmp_path / "g.ppm")
    assert canvas.shape == (32, 32 * 5 + 2 * 4, 3)
    ours = D.read_ppm(tmp_path / "g.ppm")
    ref = np.asarray(Image.open(tmp_path / "g.ppm"))
    np.testing.assert_array_equal(ours, ref)
    np.testing.assert_array_equal(ref[:, 34:66], np.round((tiles[1].transpose(1, 2, 0) + 1) * 127.5))
    assert (ref[:, 32:34] == 0).all()


def test_dataset_validation():
    with pytest.raises(ValueError):
        D.Dataset(np.full((1, 3, 4, 4), 1.5))
    with pytest.raises(ValueError):
        D.to_uint8(np.array([2.0]))
