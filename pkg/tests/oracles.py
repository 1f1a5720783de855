"""Independent brute-force oracles shared by the test modules.

None of these use the package's fast paths: window sums are explicit
loops, projections are grid searches over convex weights, and minimizers
come from dense grids or scipy's general-purpose optimizers.
"""

import itertools

import numpy as np
from scipy.optimize import minimize


def conv_matrix(psf, n, center, periodic=True):
    """Dense matrix of 1D same-size convolution ``(Au)[i] = sum_k psf[k] u[i-(k-center)]``."""
    A = np.zeros((n, n))
    for i in range(n):
        for k, p in enumerate(psf):
            j = i - (k - center)
            if periodic:
                A[i, j % n] += p
            elif 0 <= j < n:
                A[i, j] += p
    return A


def conv2d_direct(psf, u, center, periodic=True):
    h, w = u.shape
    out = np.zeros_like(u)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(psf.shape[0]):
                for b in range(psf.shape[1]):
                    ii, jj = i - (a - center[0]), j - (b - center[1])
                    if periodic:
                        acc += psf[a, b] * u[ii % h, jj % w]
                    elif 0 <= ii < h and 0 <= jj < w:
                        acc += psf[a, b] * u[ii, jj]
            out[i, j] = acc
    return out


def window_values(ws, x):
    """Signed ``<w_j, x>`` by explicit summation over every window."""
    out = []
    for j in range(len(ws)):
        win = ws.window(j)
        sl = tuple(slice(o, o + e) for o, e in zip(win.offset, win.extent))
        out.append(win.scale * float(np.sum(x[sl])))
    return np.array(out)


def penalty(ws, v, y):
    vals = np.abs(window_values(ws, v - y))
    return max(vals.max() - ws.q, 0.0)


def grid_hull_projection(r, gens, step=1e-3, refine_to=1e-8):
    """Nearest hull point by a grid over convex weights, refined locally.

    The coarse grid uses ``step``; the best cell is then searched again with
    a grid five times finer around the incumbent, down to ``refine_to``.
    """
    G = np.array(gens, dtype=float)
    k = G.shape[0]
    r = np.asarray(r, dtype=float)
    # vectorized coarse pass
    m = int(round(1 / step))
    if k == 1:
        return G[0].copy()
    axes = np.meshgrid(*[np.arange(m + 1)] * (k - 1), indexing="ij")
    head = np.stack([a.ravel() for a in axes], axis=1)
    head = head[head.sum(axis=1) <= m]
    W = np.concatenate([head, (m - head.sum(axis=1))[:, None]], axis=1) / m
    d = W @ G - r
    best = W[int(np.argmin(np.einsum("ij,ij->i", d, d)))]
    h = step
    while h > refine_to:
        cand = []
        offs = np.linspace(-h, h, 11)
        for delta in itertools.product(offs, repeat=k - 1):
            w = best.copy()
            w[:-1] += delta
            w[-1] = 1.0 - w[:-1].sum()
            if np.all(w >= 0):
                cand.append(w)
        cand = np.array(cand) if cand else best[None, :]
        d = cand @ G - r
        best = cand[int(np.argmin(np.einsum("ij,ij->i", d, d)))]
        h /= 5.0
    return best @ G


def grid_min_1d(f, lo, hi, step):
    xs = np.arange(lo, hi + step / 2, step)
    vals = np.array([f(x) for x in xs])
    return xs[int(np.argmin(vals))]


def grid_min_2d(f, center, half, step):
    """Coarse-to-fine grid minimization over a square around ``center``."""
    c = np.asarray(center, dtype=float)
    h = half
    while True:
        s = max(step, h / 50)
        xs = np.arange(-h, h + s / 2, s)
        best, bv = c, np.inf
        for a in xs:
            for b in xs:
                p = c + np.array([a, b])
                val = f(p)
                if val < bv:
                    best, bv = p, val
        c = best
        if s <= step:
            return c
        h = 3 * s


def v_step_oracle(ws, rho, b, c, eta, y):
    """Solve ``min rho theta(v) - <b, v> + eta/2 ||c - v||^2`` as a smooth QP.

    Epigraph form in ``(v, t)``: minimize ``rho t - <b,v> + eta/2||c-v||^2``
    subject to ``t >= 0`` and ``t >= +-<w_j, v - y> - q``, solved with SLSQP.
    """
    n = c.size
    W = np.array([ws.weight(j).ravel() for j in range(len(ws))])
    c, b, y = c.ravel(), b.ravel(), y.ravel()

    def obj(z):
        v, t = z[:n], z[n]
        return rho * t - b @ v + 0.5 * eta * np.sum((c - v) ** 2)

    def grad(z):
        v = z[:n]
        g = np.empty(n + 1)
        g[:n] = -b - eta * (c - v)
        g[n] = rho
        return g

    Wy = W @ y
    cons = [
        {"type": "ineq", "fun": lambda z: z[n] - (W @ z[:n] - Wy) + ws.q, "jac": lambda z: np.hstack([-W, np.ones((len(W), 1))])},
        {"type": "ineq", "fun": lambda z: z[n] + (W @ z[:n] - Wy) + ws.q, "jac": lambda z: np.hstack([W, np.ones((len(W), 1))])},
        {"type": "ineq", "fun": lambda z: z[n:], "jac": lambda z: np.eye(n + 1)[n:]},
    ]
    z0 = np.concatenate([c + b / eta, [1.0]])
    res = minimize(obj, z0, jac=grad, constraints=cons, method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
    return res.x[:n]
