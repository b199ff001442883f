import numpy as np
import pytest
from scipy.linalg import subspace_angles

from csc_ctrl import eval as E
from csc_ctrl.csc import FistaConfig
from csc_ctrl.networks import Network, get_architecture
from csc_ctrl.tensor import ShapeError

C1 = (0.01 * 2.0) ** 2


def checkerboard(n=16):
    return np.indices((n, n)).sum(axis=0) % 2 * 1.6 - 0.8


@pytest.fixture(scope="module")
def net():
    return Network(get_architecture("toy"), FistaConfig(0.1, 10), np.random.default_rng(0))


def test_identical_images():
    x = np.random.default_rng(0).uniform(-1, 1, size=(2, 3, 16, 16))
    r = E.compare(x, x)
    assert r.mse == 0.0 and r.psnr == E.PSNR_CAP and r.ssim == pytest.approx(1.0)


def test_constant_offset():
    x = np.zeros((3, 16, 16))
    assert E.mse(x, x + 0.2) == pytest.approx(0.04)
    assert E.psnr(x, x + 0.2) == pytest.approx(20.0)


def test_ssim_constant_images_closed_form():
    a, b = 0.3, -0.1
    expected = (2 * a * b + C1) / (a * a + b * b + C1)
    assert E.ssim(np.full((12, 12), a), np.full((12, 12), b)) == pytest.approx(expected, rel=1e-9)


def test_ssim_negated_checkerboard_is_negative_and_symmetric():
    x = checkerboard()
    assert E.ssim(x, -x) < 0
    y = np.random.default_rng(1).uniform(-1, 1, size=x.shape)
    assert E.ssim(x, y) == pytest.approx(E.ssim(y, x), abs=1e-12)


def test_metric_errors():
    with pytest.raises(ShapeError):
        E.mse(np.zeros(3), np.zeros(4))
    with pytest.raises(ShapeError):
        E.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_denoise_sweep_rows_and_determinism(net):
    clean = np.random.default_rng(2).uniform(-0.8, 0.8, size=(4, 3, 16, 16))
    rows = E.denoise_sweep(net, clean, 0.3, [0.1, 0.1, 0.5], seed=3)
    assert [r["lam"] for r in rows] == [0.1, 0.1, 0.5]
    assert rows[0] == rows[1]
    assert set(rows[0]) == {"lam", "psnr", "mse", "ssim"}


def test_denoise_noise_free_row_is_best_at_each_lambda(net):
    clean = net.autoencode(np.random.default_rng(4).uniform(-0.8, 0.8, size=(6, 3, 16, 16)))
    grid = [0.01, 0.1, 0.3]
    base = E.denoise_sweep(net, clean, 0.0, grid)
    for sigma in (0.1, 0.3, 0.5):
        noisy = E.denoise_sweep(net, clean, sigma, grid, seed=5)
        assert all(b["psnr"] >= r["psnr"] for b, r in zip(base, noisy))


def test_principal_components_match_svd_oracle():
    for seed in range(5):
        F = np.random.default_rng(seed).normal(size=(10, 64))
        comps = E.principal_components(F, 4)
        cov = np.cov(F, rowvar=False)
        w, v = np.linalg.eigh(cov)
        ref = v[:, np.argsort(w)[::-1][:4]]
        assert subspace_angles(comps.T, ref).max() <= 1e-8


def test_single_axis_features():
    F = np.zeros((6, 5))
    F[:, 2] = np.arange(6.0)
    comp = E.principal_components(F, 1)[0]
    assert abs(abs(comp[2]) - 1.0) <= 1e-12


def test_selection_is_scale_invariant_with_index_ties():
    F = np.random.default_rng(6).normal(size=(12, 5))
    comps = E.principal_components(F, 2)
    picks = E.select_by_component(F, comps, 3)
    assert np.array_equal(picks, E.select_by_component(F * 7.5, comps, 3))
    tied = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    assert list(E.select_by_component(tied, np.array([[1.0]]), 4)[0]) == [0, 1, 2, 3]


def test_pca_errors(net):
    with pytest.raises(ValueError):
        E.principal_components(np.zeros((10, 3)), 4)
    x = np.zeros((3, 3, 16, 16))
    with pytest.raises(ValueError):
        E.class_pca_reconstruct(net, x, np.array([0, 0, 1]), cls=5)
    with pytest.raises(ValueError):
        E.class_pca_reconstruct(net, x, np.array([0, 0, 1]), cls=1, top_k=2)


def test_class_pca_reconstruct_shapes(net):
    rng = np.random.default_rng(7)
    x = rng.uniform(-0.8, 0.8, size=(12, 3, 16, 16))
    labels = np.array([0, 1] * 6)
    recons, idx = E.class_pca_reconstruct(net, x, labels, cls=1, top_k=2, per_component=3)
    assert recons.shape == (2, 3, 3, 16, 16)
    assert set(idx.ravel()) <= set(np.flatnonzero(labels == 1))
    np.testing.assert_allclose(recons[0, 0], net.autoencode(x[idx[0, 0]][None])[0], atol=1e-12)


def test_interpolation_endpoints_and_continuity(net):
    rng = np.random.default_rng(8)
    x1, x2 = rng.uniform(-0.8, 0.8, size=(2, 3, 16, 16))
    frames = E.interpolate(net, x1, x2, 9)
    assert frames.shape == (9, 3, 16, 16)
    assert frames[-1].tobytes() == net.autoencode(x1[None])[0].tobytes()
    assert frames[0].tobytes() == net.autoencode(x2[None])[0].tobytes()
    end = E.mse(frames[0], frames[-1])
    assert all(E.mse(a, b) < end for a, b in zip(frames[:-1], frames[1:]))
    same = E.interpolate(net, x1, x1, 4)
    assert all(f.tobytes() == same[0].tobytes() for f in same)
    with pytest.raises(ValueError):
        E.interpolate(net, x1, x2, 1)
