"""Training objective terms with exact gradients w.r.t. the predicted map.

Gradients are returned as plain arrays shaped like the input map; invalid
pixels always receive zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, ShapeError
from .modulator import ModulationField
from .tensorcore import DepthMap, FeatureMap, as_depth


@dataclass(frozen=True)
class LossConfig:
    ssi_weight: float = 1.0
    grad_weight: float = 0.5
    mem_weight: float = 0.1
    tau: float = 0.4
    scales: int = 4
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.ssi_weight, self.grad_weight, self.mem_weight) < 0:
            raise InvalidArgumentError("loss weights must be >= 0")
        if not 0 < self.tau < 1:
            raise InvalidArgumentError(f"tau must be in (0, 1), got {self.tau}")
        if not self.eps > 0:
            raise InvalidArgumentError("eps must be > 0")
        if self.scales < 1:
            raise InvalidArgumentError("need at least one gradient scale")


def _pair(P, G) -> tuple[DepthMap, DepthMap, np.ndarray]:
    P, G = as_depth(P), as_depth(G)
    if P.data.shape != G.data.shape:
        raise ShapeError(f"prediction {P.data.shape} and target {G.data.shape} differ")
    return P, G, P.valid & G.valid


def normalize(x: np.ndarray, valid: np.ndarray, eps: float = 1e-8, name: str = "map"):
    """(x - mean) / std over valid pixels (population std). Invalid pixels -> 0."""
    n = int(valid.sum())
    if n < 2:
        raise InvalidArgumentError(f"{name}: need at least 2 valid pixels, got {n}")
    v = x[valid]
    mu = v.mean()
    sigma = np.sqrt(np.mean((v - mu) ** 2))
    if sigma < eps:
        raise DegenerateInputError(f"{name}: standard deviation {sigma:.3g} is below the floor {eps:g}")
    out = np.zeros_like(x)
    out[valid] = (v - mu) / sigma
    return out, sigma


def _normalize_backward(upstream: np.ndarray, x_hat: np.ndarray, sigma: float, valid: np.ndarray) -> np.ndarray:
    r = upstream[valid]
    xh = x_hat[valid]
    grad = np.zeros_like(upstream)
    grad[valid] = (r - r.mean() - xh * np.mean(r * xh)) / sigma
    return grad


def ssi_loss(P, G, eps: float = 1e-8) -> tuple[float, np.ndarray]:
    """MSE between the standardized prediction and standardized target."""
    P, G, valid = _pair(P, G)
    p_hat, sp = normalize(P.data, valid, eps, "prediction")
    g_hat, _ = normalize(G.data, valid, eps, "target")
    n = valid.sum()
    diff = np.where(valid, p_hat - g_hat, 0.0)
    value = float(np.sum(diff ** 2) / n)
    return value, _normalize_backward(2.0 * diff / n, p_hat, sp, valid)


# ---- multi-scale gradient matching ------------------------------------------------

def _pool2(x: np.ndarray, m: np.ndarray):
    h2, w2 = x.shape[0] // 2, x.shape[1] // 2
    xc = x[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    mc = m[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    return xc.mean(axis=(1, 3)), mc.all(axis=(1, 3))


def _unpool2(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    h2, w2 = g.shape
    out[:2 * h2, :2 * w2] = np.repeat(np.repeat(g / 4.0, 2, axis=0), 2, axis=1)
    return out


def _scale_term(p: np.ndarray, g: np.ndarray, m: np.ndarray):
    """Mean |dx diff| + mean |dy diff| on the (H-1) x (W-1) anchor grid."""
    h, w = p.shape
    a = np.s_[:h - 1, :w - 1]
    right = np.s_[:h - 1, 1:w]
    down = np.s_[1:h, :w - 1]
    dx = (p[right] - p[a]) - (g[right] - g[a])
    dy = (p[down] - p[a]) - (g[down] - g[a])
    mx = m[a] & m[right]
    my = m[a] & m[down]
    value = 0.0
    grad = np.zeros_like(p)
    for d, mask, nb in ((dx, mx, right), (dy, my, down)):
        n = mask.sum()
        if n == 0:
            continue
        value += np.abs(d[mask]).sum() / n
        r = np.where(mask, np.sign(d), 0.0) / n
        grad[nb] += r
        grad[a] -= r
    return value, grad


def grad_loss(P, G, scales: int = 4) -> tuple[float, np.ndarray]:
    """Sum over scales s of (1/s^2) * forward-difference mismatch of the
    2^(s-1)-times average-pooled maps. Inputs are used as given (callers
    normally pass standardized maps)."""
    P, G, valid = _pair(P, G)
    f = 2 ** (scales - 1)
    min_side = 2 * f
    if P.height < min_side or P.width < min_side:
        raise InvalidArgumentError(
            f"map {P.height}x{P.width} too small for {scales} scales; minimum size is {min_side}x{min_side}")
    p, g, m = P.data, G.data, valid
    shapes = []
    total = 0.0
    grads = []
    for s in range(1, scales + 1):
        if s > 1:
            shapes.append(p.shape)
            p, m_next = _pool2(p, m)
            g, _ = _pool2(g, m)
            m = m_next
        v, gr = _scale_term(p, g, m)
        total += v / s ** 2
        grads.append(gr / s ** 2)
    # walk each scale's gradient back to full resolution
    full = np.zeros_like(P.data)
    for s in range(scales, 0, -1):
        gr = grads[s - 1]
        for shape in reversed(shapes[:s - 1]):
            gr = _unpool2(gr, shape)
        full += gr
    return float(total), full


# ---- memory regularizer --------------------------------------------------------------

def _layer1(T) -> np.ndarray:
    if isinstance(T, ModulationField):
        return T.layer1
    if isinstance(T, FeatureMap):
        return T.data[0]
    return np.asarray(T, dtype=np.float64)


def mem_loss(T, tau: float = 0.4) -> tuple[float, np.ndarray]:
    """Hinge max(0, tau - mean T); inactive (zero gradient) at equality."""
    t = _layer1(T)
    mean = float(np.mean(t))
    if mean < tau:
        return tau - mean, np.full(t.shape, -1.0 / t.size)
    return 0.0, np.zeros(t.shape)


def total_loss(P, G, T, cfg: LossConfig = LossConfig()) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted objective; maps are standardized once and shared by the
    scale-shift and gradient terms."""
    P, G, valid = _pair(P, G)
    p_hat, sp = normalize(P.data, valid, cfg.eps, "prediction")
    g_hat, _ = normalize(G.data, valid, cfg.eps, "target")
    n = valid.sum()
    diff = np.where(valid, p_hat - g_hat, 0.0)
    ssi = float(np.sum(diff ** 2) / n)
    gl, g_grad = grad_loss(DepthMap(p_hat, valid), DepthMap(g_hat, valid), cfg.scales)
    ml, t_grad = mem_loss(T, cfg.tau)
    value = cfg.ssi_weight * ssi + cfg.grad_weight * gl + cfg.mem_weight * ml
    upstream = cfg.ssi_weight * 2.0 * diff / n + cfg.grad_weight * g_grad
    grad_p = _normalize_backward(upstream, p_hat, sp, valid)
    return value, grad_p, cfg.mem_weight * t_grad
