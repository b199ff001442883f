"""Independent reference implementations used only by the tests."""

import numpy as np


def conv2d_loops(x, K, stride, pad):
    n, c, h, w = x.shape
    m, _, k, _ = K.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, m, ho, wo))
    for b in range(n):
        for o in range(m):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for p in range(k):
                            for q in range(k):
                                r, s = i * stride + p - pad, j * stride + q - pad
                                if 0 <= r < h and 0 <= s < w:
                                    acc += x[b, ci, r, s] * K[o, ci, p, q]
                    out[b, o, i, j] = acc
    return out


def deconv2d_loops(z, K, stride, pad, out_hw):
    """Scatter each code entry's kernel into the output (transposed convolution)."""
    n, m, ho, wo = z.shape
    _, c, k, _ = K.shape
    h, w = out_hw
    out = np.zeros((n, c, h, w))
    for b in range(n):
        for o in range(m):
            for i in range(ho):
                for j in range(wo):
                    for ci in range(c):
                        for p in range(k):
                            for q in range(k):
                                r, s = i * stride + p - pad, j * stride + q - pad
                                if 0 <= r < h and 0 <= s < w:
                                    out[b, ci, r, s] += z[b, o, i, j] * K[o, ci, p, q]
    return out


def lasso_cd(D, x, lam, iters=5000, tol=1e-14):
    """Cyclic coordinate descent for min_z lam*|z|_1 + 1/2 |x - D z|^2."""
    n_atoms = D.shape[1]
    z = np.zeros(n_atoms)
    col_sq = (D * D).sum(axis=0)
    r = x - D @ z
    for _ in range(iters):
        biggest = 0.0
        for j in range(n_atoms):
            if col_sq[j] == 0:
                continue
            old = z[j]
            rho = D[:, j] @ r + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != old:
                r -= D[:, j] * (new - old)
                z[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest < tol:
            break
    return z


def lasso_value(D, x, z, lam):
    r = x - D @ z
    return lam * np.abs(z).sum() + 0.5 * r @ r


def central_diff(f, x, h=1e-6):
    """Numerical gradient of scalar f at array x (x is perturbed in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)


def random_spd(rng, n):
    B = rng.normal(size=(n, n))
    return B @ B.T + n * np.eye(n)
