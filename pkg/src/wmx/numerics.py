"""Numerical kernels shared by the analysis methods.

Everything here works in float64 and is a pure function of its inputs.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

KL_EPS = 1e-10


def _finite(a, what="input"):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")
    return a


def svd(m):
    """Thin SVD ``m = u @ diag(s) @ vt`` with ``s`` descending."""
    m = _finite(m, "matrix")
    if m.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got shape {m.shape}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return u, s, vt


def fft2(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 1:
        raise ShapeError(f"fft2 expects a non-empty 2-D array, got {image.shape}")
    return np.fft.fft2(image)


def ifft2(spectrum):
    """Inverse of :func:`fft2`, returning the real part."""
    return np.fft.ifft2(spectrum).real


def frequency_rank(height: int, width: int) -> np.ndarray:
    """Order in which frequency bins are kept by :func:`low_pass`.

    Bins are sorted by squared distance of their signed (centered) frequency
    coordinates from DC; ties go to the lower flat index.
    """
    fy = np.fft.fftfreq(height) * height
    fx = np.fft.fftfreq(width) * width
    d2 = (fy[:, None] ** 2 + fx[None, :] ** 2).ravel()
    return np.argsort(d2, kind="stable")


def low_pass_mask(height: int, width: int, cutoff: int) -> np.ndarray:
    """Boolean mask of the ``cutoff`` lowest bins plus their conjugate partners."""
    n = height * width
    if not 1 <= int(cutoff) <= n:
        raise ValueError(f"cutoff must be in [1, {n}], got {cutoff}")
    keep = frequency_rank(height, width)[: int(cutoff)]
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    mask = mask.reshape(height, width)
    # conjugate partner of (u, v) is (-u mod H, -v mod W)
    partner = np.roll(mask[::-1, ::-1], shift=(1, 1), axis=(0, 1))
    return mask | partner


def low_pass(image, cutoff: int):
    image = np.asarray(image, dtype=np.float64)
    mask = low_pass_mask(image.shape[0], image.shape[1], cutoff)
    return ifft2(fft2(image) * mask)


def _distribution(p, eps):
    p = np.asarray(p, dtype=np.float64).ravel()
    if np.any(p < 0):
        raise ValueError("distribution entries must be non-negative")
    p = p + eps
    total = p.sum()
    if total <= 0:
        raise ValueError("distribution has zero mass")
    return p / total


def kl_divergence(p, q, eps: float = KL_EPS) -> float:
    """KL(p || q) after adding ``eps`` to every bin and renormalizing."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.size != q.size:
        raise ShapeError(f"length mismatch: {p.size} vs {q.size}")
    p = _distribution(p, eps)
    q = _distribution(q, eps)
    nz = p > 0
    with np.errstate(divide="ignore"):
        terms = p[nz] * (np.log(p[nz]) - np.log(q[nz]))
    return max(float(terms.sum()), 0.0)


def correlation_distance(u, v, centered: bool = True) -> float:
    """``1 - <u - mean(u), v - mean(v)> / (|a| |b|)``.

    With ``centered`` the norms are of the centered vectors (the usual
    correlation distance); otherwise the raw norms of ``u`` and ``v`` are used.
    """
    u = _finite(u).ravel()
    v = _finite(v).ravel()
    if u.size != v.size or u.size < 2:
        raise ShapeError("correlation_distance needs two vectors of equal length >= 2")
    uc = u - u.mean()
    vc = v - v.mean()
    if not np.any(uc) or not np.any(vc):
        raise ValueError("correlation is undefined for a constant vector")
    if centered:
        denom = np.linalg.norm(uc) * np.linalg.norm(vc)
    else:
        denom = np.linalg.norm(u) * np.linalg.norm(v)
    return float(np.clip(1.0 - np.dot(uc, vc) / denom, 0.0, 2.0))


def cosine_similarity(u, v) -> float:
    u = _finite(u).ravel()
    v = _finite(v).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def heaviside_pulse(length: int, r1: int, r2: int) -> np.ndarray:
    """``theta(t - r1) - theta(t - r2)`` with ``theta(0) = 1``: ones on [r1, r2)."""
    if not 0 <= r1 <= r2 <= length:
        raise ValueError(f"need 0 <= r1 <= r2 <= length, got r1={r1}, r2={r2}, length={length}")
    t = np.arange(length)
    return ((t >= r1) & (t < r2)).astype(np.float64)


def zscore(a):
    a = _finite(a)
    sd = a.std()
    if sd == 0:
        return np.zeros_like(a)
    return (a - a.mean()) / sd


def nss(saliency, fixations) -> float:
    """Normalized scanpath saliency: mean z-scored saliency at fixations."""
    saliency = _finite(saliency, "saliency")
    fix = np.asarray(fixations).astype(bool)
    if saliency.shape != fix.shape:
        raise ShapeError(f"shape mismatch {saliency.shape} vs {fix.shape}")
    if not fix.any():
        raise ValueError("fixation map has no fixations")
    if saliency.std() == 0:
        return 0.0
    return float(zscore(saliency)[fix].mean())


def pearson(a, b) -> float:
    a = _finite(a).ravel()
    b = _finite(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    ac, bc = a - a.mean(), b - b.mean()
    if not np.any(ac) or not np.any(bc):
        raise ValueError("pearson correlation of a constant map")
    r = np.dot(ac, bc) / (np.linalg.norm(ac) * np.linalg.norm(bc))
    return float(np.clip(r, -1.0, 1.0))


def minmax_normalize(values):
    values = _finite(values)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def fix_sign(vectors):
    """Flip each row so that its largest-magnitude entry is positive."""
    vectors = np.array(vectors, dtype=np.float64, copy=True)
    flat = vectors.reshape(vectors.shape[0], -1)
    idx = np.argmax(np.abs(flat), axis=1)
    signs = np.sign(flat[np.arange(flat.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vectors * signs.reshape((-1,) + (1,) * (vectors.ndim - 1))


def central_gradient(x, axis: int = 0):
    """Central differences inside, one-sided at the ends."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 3:
        raise ValueError("need at least 3 samples along the gradient axis")
    return np.gradient(x, axis=axis, edge_order=1)
