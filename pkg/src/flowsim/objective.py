"""Objective oracles: loss, gradient, Hessian-vector products, and
third-derivative contractions grad_w[u^T H(w) v], behind one interface.

Ships three families: quadratics, an analytic two-coordinate landscape
with controllable curvature dynamics (plus optional extra blocks for
multiple unstable directions), and a tiny tanh MLP on synthetic data
where higher derivatives come from central finite differences.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import lobpcg_topk

HVP_FD_COEF = 1e-4
THIRD_FD_COEF = 1e-3


@dataclass
class ObjectiveOracle:
    dim: int
    loss: callable
    grad: callable
    hvp: callable
    third_bilinear: callable
    derivative_mode: str = "analytic"
    name: str = "objective"
    default_w0: np.ndarray | None = None


def make_quadratic(H, b=None):
    """L(w) = 1/2 w^T H w - b^T w; H constant so third derivatives vanish."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = np.diag(H)
    if not np.allclose(H, H.T):
        raise ValueError("H must be symmetric")
    d = H.shape[0]
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)

    def loss(w):
        return float(0.5 * w @ (H @ w) - b @ w)

    def grad(w):
        return H @ w - b

    def hvp(w, v):
        return H @ v

    def third_bilinear(w, u, v):
        return np.zeros(d)

    return ObjectiveOracle(dim=d, loss=loss, grad=grad, hvp=hvp,
                           third_bilinear=third_bilinear, name="quadratic",
                           default_w0=np.ones(d))


@dataclass
class EosToyParams:
    """Curvature-coupled landscape: one (x, y) block per unstable direction.

    Block i contributes 1/2 * y_i * x_i^2 + (a_i/2)(y_i - y_star_i)^2; the
    y coordinate is both a weight and the curvature seen along x, so the
    sharpness rises along the plain gradient flow whenever y < y_star.
    ``coupling`` adds a bilinear c * x_0 * x_i tie to the first block.
    """

    a: float = 0.01
    y_star: float = 300.0
    extra_blocks: list = field(default_factory=list)  # (a_i, y_star_i, coupling)
    floor: float = 0.0

    def __post_init__(self):
        if self.a <= 0 or self.y_star <= 0:
            raise ValueError("a and y_star must be positive")


def make_eos_toy(p):
    blocks = [(p.a, p.y_star, 0.0)] + [tuple(map(float, blk)) for blk in p.extra_blocks]
    nb = len(blocks)
    d = 2 * nb
    floor = float(p.floor)

    def split(w):
        return w[0::2], w[1::2]  # x coords, y coords

    def loss(w):
        x, y = split(w)
        val = 0.0
        for i, (a, ys, c) in enumerate(blocks):
            val += 0.5 * y[i] * x[i] ** 2 + 0.5 * a * (y[i] - ys) ** 2
            if i > 0:
                val += c * x[0] * x[i]
        return float(val + 0.5 * floor * (w @ w))

    def grad(w):
        x, y = split(w)
        g = np.zeros(d)
        for i, (a, ys, c) in enumerate(blocks):
            g[2 * i] += x[i] * y[i]
            g[2 * i + 1] += 0.5 * x[i] ** 2 + a * (y[i] - ys)
            if i > 0:
                g[0] += c * x[i]
                g[2 * i] += c * x[0]
        return g + floor * w

    def hvp(w, v):
        x, y = split(w)
        out = np.zeros(d)
        for i, (a, ys, c) in enumerate(blocks):
            vx, vy = v[2 * i], v[2 * i + 1]
            out[2 * i] += y[i] * vx + x[i] * vy
            out[2 * i + 1] += x[i] * vx + a * vy
            if i > 0:
                out[0] += c * v[2 * i]
                out[2 * i] += c * v[0]
        return out + floor * v

    def third_bilinear(w, u, v):
        # H entries linear in w: dH_xx/dy = 1, dH_xy/dx = 1 per block
        out = np.zeros(d)
        for i in range(nb):
            ux, uy = u[2 * i], u[2 * i + 1]
            vx, vy = v[2 * i], v[2 * i + 1]
            out[2 * i] = ux * vy + uy * vx
            out[2 * i + 1] = ux * vx
        return out

    w0 = np.zeros(d)
    w0[0::2] = 0.5
    w0[1::2] = [blk[1] / 2.0 for blk in blocks]
    return ObjectiveOracle(dim=d, loss=loss, grad=grad, hvp=hvp,
                           third_bilinear=third_bilinear, name="eos_toy",
                           default_w0=w0)


def _mlp_shapes(widths):
    return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


def _unpack(w, widths):
    params = []
    pos = 0
    for out_d, in_d in _mlp_shapes(widths):
        W = w[pos:pos + out_d * in_d].reshape(out_d, in_d)
        pos += out_d * in_d
        b = w[pos:pos + out_d]
        pos += out_d
        params.append((W, b))
    return params


def make_mlp(widths, dataset_size=32, seed=0, teacher_scale=1.0):
    """Tanh MLP with MSE loss on a fixed synthetic regression set.

    Gradient is analytic (backprop); hvp and third_bilinear use central
    finite differences of the gradient / hvp with norm-scaled steps.
    """
    widths = list(widths)
    n_params = sum(o * i + o for o, i in _mlp_shapes(widths))
    if n_params > 2000:
        raise ValueError(f"parameter budget is 2000, got {n_params}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(dataset_size, widths[0]))
    teacher = rng.standard_normal(widths[0]) * teacher_scale
    Y = np.tanh(X @ teacher).reshape(dataset_size, -1)
    if Y.shape[1] != widths[-1]:
        Y = np.tile(Y[:, :1], (1, widths[-1]))

    def forward(w):
        params = _unpack(w, widths)
        acts = [X]
        pre = None
        for li, (W, b) in enumerate(params):
            pre = acts[-1] @ W.T + b
            if li < len(params) - 1:
                acts.append(np.tanh(pre))
            else:
                acts.append(pre)
        if not np.all(np.isfinite(acts[-1])):
            raise FloatingPointError("non-finite activations")
        return acts, pre

    def loss(w):
        acts, _ = forward(w)
        r = acts[-1] - Y
        return float(np.mean(np.sum(r * r, axis=1)))

    def grad(w):
        params = _unpack(w, widths)
        acts, _ = forward(w)
        n = X.shape[0]
        delta = 2.0 * (acts[-1] - Y) / n
        gparts = []
        for li in range(len(params) - 1, -1, -1):
            W, b = params[li]
            gW = delta.T @ acts[li]
            gb = delta.sum(axis=0)
            gparts.append((gW, gb))
            if li > 0:
                delta = (delta @ W) * (1.0 - acts[li] ** 2)
        g = np.concatenate([np.concatenate([gW.ravel(), gb])
                            for gW, gb in reversed(gparts)])
        return g

    def hvp(w, v):
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return np.zeros_like(v)
        h = HVP_FD_COEF * (1.0 + np.linalg.norm(w))
        u = v / nv
        return (grad(w + h * u) - grad(w - h * u)) / (2.0 * h) * nv

    def third_bilinear(w, u, v):
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return np.zeros_like(u)
        h = THIRD_FD_COEF * (1.0 + np.linalg.norm(w))
        e = u / nu
        return (hvp(w + h * e, v) - hvp(w - h * e, v)) / (2.0 * h) * nu

    w0 = rng.standard_normal(n_params) / np.sqrt(max(widths))
    return ObjectiveOracle(dim=n_params, loss=loss, grad=grad, hvp=hvp,
                           third_bilinear=third_bilinear,
                           derivative_mode="finite-difference", name="mlp",
                           default_w0=w0)


def sharpness(oracle, w, return_vector=False, seed=0):
    """Top Hessian eigenvalue at w (and its eigenvector on request)."""
    pairs = lobpcg_topk(lambda v: oracle.hvp(w, v), oracle.dim,
                        min(2, oracle.dim), tol=1e-10, seed=seed)
    if return_vector:
        gap = (pairs.values[0] - pairs.values[1]) if len(pairs.values) > 1 else np.inf
        degenerate = gap < 1e-8 * max(1.0, abs(pairs.values[0]))
        return float(pairs.values[0]), pairs.vectors[:, 0], degenerate
    return float(pairs.values[0])


def grad_sharpness(oracle, w, seed=0):
    """grad of the top Hessian eigenvalue: third_bilinear(w, u, u) for the
    top eigenvector u (valid while the top eigenvalue is simple)."""
    s, u, degenerate = sharpness(oracle, w, return_vector=True, seed=seed)
    if degenerate:
        raise ValueError("top Hessian eigenvalue is degenerate; no gradient")
    return oracle.third_bilinear(w, u, u)
