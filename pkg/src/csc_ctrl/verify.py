"""Self-checks run by ``csc-ctrl verify``.

Each suite returns a list of ``Check`` results; a suite passes when every check does.
The references here (coordinate descent, nested loops, SVD) share no code with
the routines they check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .csc import ConvDictionary, FistaConfig, fista_encode, kkt_residual, lasso_objective
from .rate import RateConfig, coding_rate, rate_reduction


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


# -- references ---------------------------------------------------------------


def lasso_coordinate_descent(D, x, lam, sweeps=5000, tol=1e-14):
    """Cyclic coordinate descent for ``lam*|z|_1 + 1/2|x - D z|^2``."""
    z = np.zeros(D.shape[1])
    col_sq = (D * D).sum(axis=0)
    r = x.astype(np.float64).copy()
    for _ in range(sweeps):
        biggest = 0.0
        for j in range(D.shape[1]):
            if col_sq[j] == 0.0:
                continue
            rho = D[:, j] @ r + col_sq[j] * z[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != z[j]:
                r -= D[:, j] * (new - z[j])
                biggest = max(biggest, abs(new - z[j]))
                z[j] = new
        if biggest < tol:
            break
    return z


def conv_loops(x, K, stride, pad):
    n, c, h, w = x.shape
    m, _, k, _ = K.shape
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    out = np.zeros((n, m, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, K, axes=([1, 2, 3], [1, 2, 3]))
    return out


def rate_svd(Z, eps2):
    """Coding rate of columns of Z [d, n] from singular values."""
    d, n = Z.shape
    s = np.linalg.svd(Z, compute_uv=False)
    return 0.5 * float(np.sum(np.log1p(d / (n * eps2) * s * s)))


def matrix_instance(rng, signal_dim=16, atoms=32):
    """A 1x1-spatial, k=1 convolutional problem equivalent to a dense LASSO."""
    D = rng.normal(size=(signal_dim, atoms)) / np.sqrt(signal_dim)
    x = rng.normal(size=signal_dim)
    lam = float(rng.uniform(0.05, 0.3)) * float(np.abs(D.T @ x).max())
    dictionary = ConvDictionary("D", D.T.reshape(atoms, signal_dim, 1, 1))
    return D, x, lam, dictionary


# -- suites -------------------------------------------------------------------


def suite_lasso_oracle(instances: int = 50, iterations: int = 1000, seed: int = 0) -> list[Check]:
    checks = []
    for i in range(instances):
        rng = np.random.default_rng(seed + i)
        D, x, lam, dictionary = matrix_instance(rng)
        xs = x.reshape(1, -1, 1, 1)
        trace: list[np.ndarray] = []
        z = fista_encode(xs, dictionary, FistaConfig(lam, iterations), trace=trace)
        z_ref = lasso_coordinate_descent(D, x, lam)
        f_ref = lam * np.abs(z_ref).sum() + 0.5 * np.sum((x - D @ z_ref) ** 2)
        gap = lasso_objective(xs, z, dictionary, lam) - f_ref
        kkt = kkt_residual(xs, z, dictionary, lam)
        L = dictionary.lipschitz((1, 1))
        r0 = float(np.sum(z_ref**2))
        bound_ok = all(
            lasso_objective(xs, zk, dictionary, lam) - f_ref <= 2 * L * r0 / (k + 2) ** 2 + 1e-12
            for k, zk in enumerate(trace)
        )
        checks.append(Check(f"objective[{i}]", abs(gap) <= 1e-6, f"gap={gap:.3e}"))
        checks.append(Check(f"kkt[{i}]", kkt <= 1e-4, f"kkt={kkt:.3e}"))
        checks.append(Check(f"rate-bound[{i}]", bound_ok))
    return checks


def suite_adjoint(draws: int = 100, seed: int = 0) -> list[Check]:
    checks = []
    rng = np.random.default_rng(seed)
    for i in range(draws):
        k, stride, pad = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
        h, w = int(rng.integers(max(k, 3), 10)), int(rng.integers(max(k, 3), 10))
        cin, cout, n = (int(v) for v in rng.integers(1, 4, size=3))
        x = rng.normal(size=(n, cin, h, w))
        K = rng.normal(size=(cout, cin, k, k))
        y = T.conv2d(x, K, (stride, pad))
        ref = conv_loops(x, K, stride, pad)
        rel = np.linalg.norm(y - ref) / max(np.linalg.norm(ref), 1e-300)
        z = rng.normal(size=y.shape)
        lhs, rhs = np.vdot(y, z), np.vdot(x, T.deconv2d(z, K, (stride, pad), out_hw=(h, w)))
        adj = abs(lhs - rhs) / max(1.0, abs(lhs))
        checks.append(Check(f"conv-oracle[{i}]", rel <= 1e-12, f"rel={rel:.2e}"))
        checks.append(Check(f"adjoint[{i}]", adj <= 1e-10, f"err={adj:.2e}"))
    return checks


def suite_rate(trials: int = 100, seed: int = 0) -> list[Check]:
    cfg = RateConfig()
    checks = []
    rng = np.random.default_rng(seed)
    for i in range(trials):
        d, n = int(rng.integers(4, 24)), int(rng.integers(4, 24))
        Z = rng.normal(size=(d, n))
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        W = rng.normal(size=(d, n)) * rng.uniform(0.2, 3.0, size=(d, 1))
        checks.append(Check(f"self[{i}]", abs(rate_reduction(Z, Z, cfg)) <= 1e-10))
        checks.append(Check(f"rotation[{i}]", abs(rate_reduction(Z, Z @ Q, cfg)) <= 1e-8))
        checks.append(Check(f"symmetry[{i}]", rate_reduction(Z, W, cfg) == rate_reduction(W, Z, cfg)))
        checks.append(Check(f"positive[{i}]", rate_reduction(Z, W, cfg) > 0))
        err = abs(coding_rate(Z, cfg) - rate_svd(Z, cfg.eps2))
        checks.append(Check(f"svd[{i}]", err <= 1e-10, f"err={err:.2e}"))
    return checks


def suite_gradients(seeds: int = 5) -> list[Check]:
    """Finite-difference check of the kernel gradient through conv, FISTA and the rate."""
    checks = []
    geom = T.ConvGeometry(3, 1, 1, 2, 3)
    for s in range(seeds):
        rng = np.random.default_rng(s)
        x = rng.normal(size=(4, 2, 5, 5))
        K = rng.normal(size=(3, 2, 3, 3)) * 0.3

        def loss(kernel, graph):
            k = graph.param("K", kernel)
            z = ad.conv2d(graph.constant(x), k, geom)
            xh = ad.tanh(ad.deconv2d(z, k, geom, out_hw=(5, 5)))
            Z = z.reshape(4, -1)
            Zh = ad.conv2d(xh, k, geom).reshape(4, -1)
            return rate_reduction(Z.T, Zh.T)

        g = ad.Graph()
        grad = g.backward(loss(K, g))["K"]
        num = np.zeros_like(K)
        h = 1e-6
        for idx in np.ndindex(K.shape):
            Kp, Km = K.copy(), K.copy()
            Kp[idx] += h
            Km[idx] -= h
            num[idx] = (loss(Kp, ad.Graph(False)).value - loss(Km, ad.Graph(False)).value) / (2 * h)
        rel = np.linalg.norm(grad - num) / np.linalg.norm(num)
        checks.append(Check(f"kernel-grad[{s}]", rel <= 1e-5, f"rel={rel:.2e}"))
    return checks


SUITES = {
    "lasso-oracle": suite_lasso_oracle,
    "adjoint": suite_adjoint,
    "rate": suite_rate,
    "gradients": suite_gradients,
}


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
