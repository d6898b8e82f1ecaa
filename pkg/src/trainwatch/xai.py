"""Post-hoc analysis math: attention aggregation, Grad-CAM, and exact t-SNE.

The t-SNE similarity matrices use a single global bandwidth and joint
normalization over all ordered pairs; per-point perplexity calibration is
available behind an explicit flag but off by default. Everything is exact
O(N^2), intended for desk-scale inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-6


# ---------------------------------------------------------------------------
# Attention


def validate_attention(tensor: np.ndarray) -> np.ndarray:
    """Check an (heads, tokens, tokens) tensor is row-stochastic per head."""
    a = np.asarray(tensor, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError("attention tensor must have shape (heads, n, n)")
    if not np.isfinite(a).all():
        raise ValueError("attention tensor contains non-finite entries")
    if (a < 0.0).any():
        raise ValueError("attention weights must be non-negative")
    rows = a.sum(axis=2)
    if np.abs(rows - 1.0).max() > ROW_SUM_TOL:
        raise ValueError("attention rows must sum to 1")
    return a


def attention_head_mean(tensor: np.ndarray) -> np.ndarray:
    """Average the per-head attention matrices into one (n, n) matrix."""
    a = validate_attention(tensor)
    return a.mean(axis=0)


def token_importance(mean_attention: np.ndarray) -> np.ndarray:
    """Per-token importance: total attention directed at each token
    (column sums of the head-averaged matrix)."""
    m = np.asarray(mean_attention, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("mean attention must be a square matrix")
    return m.sum(axis=0)


# ---------------------------------------------------------------------------
# Grad-CAM


@dataclass(frozen=True)
class GradcamInput:
    """Feature maps and matching output gradients; the normalizer is the
    per-map cell count i*j."""

    maps: tuple[np.ndarray, ...]
    gradients: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, maps, gradients) -> "GradcamInput":
        ms = tuple(np.asarray(m, dtype=np.float64) for m in maps)
        gs = tuple(np.asarray(g, dtype=np.float64) for g in gradients)
        if len(ms) != len(gs) or not ms:
            raise ValueError("need one gradient grid per feature map")
        shape = ms[0].shape
        for m, g in zip(ms, gs):
            if m.ndim != 2 or m.shape != shape or g.shape != shape:
                raise ValueError("maps and gradients must share one 2-D shape")
        return cls(maps=ms, gradients=gs)


def gradcam_weights(inputs: GradcamInput) -> np.ndarray:
    """Per-map importance: the gradient grid averaged over all cells."""
    return np.array([float(g.mean()) for g in inputs.gradients])


def gradcam_map(weights: np.ndarray, maps) -> np.ndarray:
    """ReLU-clamped weighted combination of the feature maps."""
    ms = [np.asarray(m, dtype=np.float64) for m in maps]
    w = np.asarray(weights, dtype=np.float64).ravel()
    if len(ms) != w.size:
        raise ValueError("one weight per feature map required")
    shape = ms[0].shape
    if any(m.shape != shape for m in ms):
        raise ValueError("feature maps must share one shape")
    combined = sum(wk * mk for wk, mk in zip(w, ms))
    return np.maximum(combined, 0.0)


# ---------------------------------------------------------------------------
# t-SNE


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def tsne_p_matrix(x: np.ndarray, sigma: float = 1.0, *,
                  perplexity: float | None = None) -> np.ndarray:
    """Joint high-dimensional similarity matrix.

    Gaussian kernel with one global sigma, normalized over all ordered
    pairs k != l, zero diagonal, then symmetrized. Passing a perplexity
    switches to standard per-point bandwidth calibration instead of the
    single global sigma (extension; off by default).
    """
    xs = np.asarray(x, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 2:
        raise ValueError("need an (N>=2, D) matrix")
    d2 = _pairwise_sq_dists(xs)
    n = xs.shape[0]
    if perplexity is None:
        if sigma <= 0.0:
            raise ValueError("sigma must be positive")
        kernel = np.exp(-d2 / (2.0 * sigma * sigma))
        np.fill_diagonal(kernel, 0.0)
        p = kernel / kernel.sum()
    else:
        cond = _conditional_p(d2, perplexity)
        p = (cond + cond.T) / (2.0 * n)
    return (p + p.T) / 2.0


def _conditional_p(d2: np.ndarray, perplexity: float) -> np.ndarray:
    n = d2.shape[0]
    target = math.log(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        lo, hi = 1e-20, 1e20
        row = np.delete(d2[i], i)
        for _ in range(64):
            beta = math.sqrt(lo * hi)
            w = np.exp(-row * beta)
            total = w.sum()
            if total <= 0.0:
                hi = beta
                continue
            p = w / total
            h = float(-(p[p > 0] * np.log(p[p > 0])).sum())
            if h > target:
                lo = beta
            else:
                hi = beta
        w = np.exp(-row * math.sqrt(lo * hi))
        p = w / w.sum()
        cond[i, np.arange(n) != i] = p
    return cond


def tsne_q_matrix(y: np.ndarray) -> np.ndarray:
    """Student-t (df=1) joint similarity matrix of the embedding."""
    ys = np.asarray(y, dtype=np.float64)
    if ys.ndim != 2 or ys.shape[0] < 2:
        raise ValueError("need an (N>=2, d) matrix")
    inv = 1.0 / (1.0 + _pairwise_sq_dists(ys))
    np.fill_diagonal(inv, 0.0)
    return inv / inv.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(P||Q) over off-diagonal entries with the 0*log0 = 0 convention.

    q = 0 where p > 0 is impossible for finite embeddings (the Student-t
    kernel has full support) and is asserted rather than handled.
    """
    ps = np.asarray(p, dtype=np.float64)
    qs = np.asarray(q, dtype=np.float64)
    if ps.shape != qs.shape:
        raise ValueError("P and Q must share a shape")
    mask = ps > 0.0
    assert not (qs[mask] == 0.0).any(), "q=0 where p>0: degenerate embedding"
    return float((ps[mask] * np.log(ps[mask] / qs[mask])).sum())


def tsne_kl_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Closed-form gradient of KL(P||Q(y)) with respect to the embedding."""
    ys = np.asarray(y, dtype=np.float64)
    inv = 1.0 / (1.0 + _pairwise_sq_dists(ys))
    np.fill_diagonal(inv, 0.0)
    q = inv / inv.sum()
    coeff = (p - q) * inv
    diff = ys[:, None, :] - ys[None, :, :]
    return 4.0 * (coeff[:, :, None] * diff).sum(axis=1)


def tsne_embed(x: np.ndarray, d: int = 2, sigma: float = 1.0,
               iters: int = 200, learning_rate: float = 100.0,
               seed: int = 0, *,
               perplexity: float | None = None) -> tuple[np.ndarray, list[float]]:
    """Gradient-descend the embedding; returns (Y, per-iteration KL)."""
    xs = np.asarray(x, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 2:
        raise ValueError("need an (N>=2, D) matrix")
    if d not in (2, 3):
        raise ValueError("embedding dimension must be 2 or 3")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p = tsne_p_matrix(xs, sigma, perplexity=perplexity)
    rng = np.random.default_rng(seed)
    y = rng.normal(scale=1e-4, size=(xs.shape[0], d))
    trajectory = [kl_divergence(p, tsne_q_matrix(y))]
    for _ in range(iters):
        y = y - learning_rate * tsne_kl_gradient(p, y)
        trajectory.append(kl_divergence(p, tsne_q_matrix(y)))
    return y, trajectory
