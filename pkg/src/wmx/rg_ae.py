"""Transparent autoencoder built from filtered singular vectors.

Frames are flattened into rows of a data matrix; its leading right-singular
vectors (frame-space principal directions) are low-pass filtered in the 2-D
Fourier domain, which drops the high-frequency modes in the spirit of a
momentum-space coarse-graining step.  The filtered vectors form the columns
of ``alpha``; encoding is ``alpha.T @ x`` and decoding ``alpha @ z``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics
from .errors import ShapeError
from .model_store import (
    ModelManifest, gray_to_rgb, load_model, records_for, save_model, write_ppm,
)

REFERENCE_KL = {"vae1": 0.024, "svd_cutoff175": 0.179, "svd_cutoff150": 0.521}


@dataclass
class SingularBasis:
    alpha: np.ndarray  # (D, k)
    singular_values: np.ndarray  # all singular values of the fitted sample
    frame_shape: tuple[int, int]
    class_count: int
    cutoff: int | None = None
    one_hot: bool = False
    mean: np.ndarray | None = None
    reorthonormalized: bool = False

    @property
    def k(self) -> int:
        return self.alpha.shape[1]

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    @property
    def channels(self) -> int:
        return self.class_count if self.one_hot else 1


def vectorize(frames, class_count: int, one_hot: bool = False) -> np.ndarray:
    """(N, H, W) class indices -> (N, D) reals.

    Single-channel mode scales indices to [0, 1] by ``index / (class_count - 1)``;
    one-hot mode stacks the per-class indicator planes.
    """
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    if one_hot:
        planes = (frames[:, None] == np.arange(class_count)[None, :, None, None])
        return planes.reshape(frames.shape[0], -1).astype(np.float64)
    return frames.reshape(frames.shape[0], -1).astype(np.float64) / (class_count - 1)


def numerical_rank(s, shape) -> int:
    if s.size == 0 or s[0] == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(np.float64).eps
    return int(np.sum(s > tol))


def filter_vector(v, frame_shape, channels: int, cutoff: int | None) -> np.ndarray:
    if cutoff is None:
        return v.copy()
    planes = v.reshape((channels,) + tuple(frame_shape))
    return np.stack([numerics.low_pass(p, cutoff) for p in planes]).ravel()


def fit(frames, k: int, cutoff: int | None = None, class_count: int = 24, center: bool = False,
        reorthonormalize: bool = False, one_hot: bool = False) -> SingularBasis:
    """SVD of the sample, then low-pass filter each of the top-``k`` singular vectors."""
    frames = np.asarray(frames)
    x = vectorize(frames, class_count, one_hot)
    frame_shape = tuple(frames.shape[-2:])
    mean = x.mean(axis=0) if center else None
    if center:
        x = x - mean
    if k < 1 or k > x.shape[0]:
        raise ValueError(f"k must be in [1, sample size {x.shape[0]}], got {k}")
    _, s, vt = numerics.svd(x)
    rank = numerical_rank(s, x.shape)
    if k > rank:
        raise ValueError(f"k={k} exceeds the rank {rank} of the sample")
    if cutoff is not None and not 1 <= cutoff <= frame_shape[0] * frame_shape[1]:
        raise ValueError(f"cutoff must be in [1, {frame_shape[0] * frame_shape[1]}], got {cutoff}")
    vecs = numerics.fix_sign(vt[:k])
    channels = class_count if one_hot else 1
    alpha = np.stack([filter_vector(v, frame_shape, channels, cutoff) for v in vecs], axis=1)
    if reorthonormalize:
        q, r = np.linalg.qr(alpha)
        # keep each column's orientation
        q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
        alpha = q
    return SingularBasis(alpha, s, frame_shape, class_count, cutoff, one_hot, mean, reorthonormalize)


def encode(basis: SingularBasis, x) -> np.ndarray:
    """``z = alpha.T @ x``; ``x`` is one vector (D,) or a batch (N, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.dim:
        raise ShapeError(f"expected vectors of length {basis.dim}, got {x.shape}")
    if basis.mean is not None:
        x = x - basis.mean
    return x @ basis.alpha


def decode(basis: SingularBasis, z) -> np.ndarray:
    """``x_hat = alpha @ z`` (plus the mean when the basis is centered)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != basis.k:
        raise ShapeError(f"expected latents of length {basis.k}, got {z.shape}")
    x = z @ basis.alpha.T
    if basis.mean is not None:
        x = x + basis.mean
    return x


def render(basis: SingularBasis, x_hat) -> np.ndarray:
    """Reconstructed vectors -> class-index frames."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    h, w = basis.frame_shape
    if basis.one_hot:
        planes = x_hat.reshape(-1, basis.class_count, h, w)
        return np.argmax(planes, axis=1).astype(np.uint8)
    idx = np.rint(np.clip(x_hat, 0.0, 1.0) * (basis.class_count - 1))
    return idx.reshape(-1, h, w).astype(np.uint8)


def encode_frames(basis: SingularBasis, frames) -> np.ndarray:
    return encode(basis, vectorize(frames, basis.class_count, basis.one_hot))


def reconstruct(basis: SingularBasis, x) -> np.ndarray:
    return decode(basis, encode(basis, x))


def kl_error(x, x_hat, eps: float = numerics.KL_EPS) -> float:
    """KL between a frame vector and its reconstruction, both read as distributions."""
    return numerics.kl_divergence(np.clip(x, 0.0, None), np.clip(x_hat, 0.0, None), eps)


def evaluate(basis: SingularBasis, frames, eps: float = numerics.KL_EPS) -> float:
    """Mean per-frame KL reconstruction error."""
    x = vectorize(frames, basis.class_count, basis.one_hot)
    if x.shape[0] == 0:
        raise ValueError("evaluate needs at least one frame")
    x_hat = reconstruct(basis, x)
    return float(np.mean([kl_error(a, b, eps) for a, b in zip(x, x_hat)]))


def frobenius_error(basis: SingularBasis, frames) -> float:
    x = vectorize(frames, basis.class_count, basis.one_hot)
    return float(np.linalg.norm(x - reconstruct(basis, x)))


def tail_energy(singular_values, k: int) -> float:
    """sqrt of the sum of squared singular values past the first ``k``."""
    return float(np.sqrt(np.sum(np.asarray(singular_values)[k:] ** 2)))


def spectral_concentration(image, fraction: float = 0.05) -> float:
    """Share of spectral energy in the lowest ``fraction`` of frequency bins."""
    image = np.asarray(image, dtype=np.float64)
    power = np.abs(numerics.fft2(image)).ravel() ** 2
    order = numerics.frequency_rank(*image.shape)
    n = max(1, int(round(fraction * image.size)))
    return float(power[order[:n]].sum() / power.sum())


def column_image(basis: SingularBasis, j: int) -> np.ndarray:
    """Column ``j`` as an (H, W) image; one-hot bases are summed over classes."""
    col = basis.alpha[:, j].reshape((basis.channels,) + basis.frame_shape)
    return col.sum(axis=0)


def spectrum_image(image) -> np.ndarray:
    """Centered log-magnitude spectrum scaled to [0, 1]."""
    mag = np.log1p(np.abs(np.fft.fftshift(numerics.fft2(image))))
    return numerics.minmax_normalize(mag)


def visualize_basis(basis: SingularBasis, top_k: int, out_dir) -> list[Path]:
    """Write ``alpha_<j>.ppm`` and ``alpha_<j>_fft.ppm`` for the first ``top_k`` columns."""
    if not 1 <= top_k <= basis.k:
        raise ValueError(f"top_k must be in [1, {basis.k}], got {top_k}")
    out_dir = Path(out_dir)
    written = []
    for j in range(top_k):
        img = column_image(basis, j)
        p = out_dir / f"alpha_{j}.ppm"
        write_ppm(gray_to_rgb(numerics.minmax_normalize(img)), p)
        q = out_dir / f"alpha_{j}_fft.ppm"
        write_ppm(gray_to_rgb(spectrum_image(img)), q)
        written += [p, q]
    return written


def save_basis(basis: SingularBasis, path) -> ModelManifest:
    tensors = {"alpha": basis.alpha, "singular_values": basis.singular_values}
    if basis.mean is not None:
        tensors["mean"] = basis.mean
    meta = {"cutoff": basis.cutoff, "frame_shape": list(basis.frame_shape),
            "class_count": basis.class_count, "one_hot": basis.one_hot,
            "reorthonormalized": basis.reorthonormalized}
    manifest = ModelManifest("rgae", tensors=records_for(tensors), latent_dim=basis.k, meta=meta)
    return save_model(manifest, tensors, path)


def load_basis(path) -> SingularBasis:
    manifest, tensors = load_model(path)
    if manifest.model_kind != "rgae":
        raise ShapeError(f"expected an rgae container, got {manifest.model_kind}")
    m = manifest.meta
    mean = tensors.get("mean")
    return SingularBasis(
        tensors["alpha"].astype(np.float64), tensors["singular_values"].astype(np.float64),
        tuple(m["frame_shape"]), int(m["class_count"]), m.get("cutoff"), bool(m.get("one_hot")),
        None if mean is None else mean.astype(np.float64), bool(m.get("reorthonormalized")),
    )
