"""Feature-map visualization for the convolutional encoder.

Phase one turns each grey-scale feature map into an RGB mask over the input
frame; phase two summarizes a layer by the leading right-singular vectors of
its stacked maps (eigen-maps).  Filters of two models are paired by the
correlation distance of their maps on a shared input frame.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics
from .errors import ShapeError
from .model_store import join_images, render_frame, write_ppm
from .nets import VAE, one_hot

log = logging.getLogger(__name__)

SEPARATOR = 2


@dataclass
class LayerMaps:
    layer: int  # 1-based
    maps: np.ndarray  # (channels, h, w), post-activation


@dataclass
class FilterPairing:
    layer: int
    pairs: list[tuple[int, int, float]]  # (filter in model A, filter in model B, distance)
    excluded_a: list[int] = field(default_factory=list)
    excluded_b: list[int] = field(default_factory=list)


def extract_maps(model: VAE, frame) -> list[LayerMaps]:
    frame = np.asarray(frame)
    x = one_hot(frame, model.class_count) if frame.ndim == 2 else frame
    capture: list[np.ndarray] = []
    model.encode(x, capture=capture)
    convs = [i for i, layer in enumerate(model.encoder) if layer.kind == "conv"]
    return [LayerMaps(n, capture[i]) for n, i in enumerate(convs, start=1)]


def upsample(values, height: int, width: int, mode: str = "bilinear") -> np.ndarray:
    """Resize an (h, w) map; bilinear interpolation maps corners onto corners."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    if mode == "nearest":
        ri = np.minimum((np.arange(height) * h) // height, h - 1)
        ci = np.minimum((np.arange(width) * w) // width, w - 1)
        return values[ri][:, ci]
    if mode != "bilinear":
        raise ValueError(f"unknown upsampling mode {mode!r}")
    ys = np.linspace(0, h - 1, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, width) if width > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    top = values[y0][:, x0] * (1 - fx) + values[y0][:, x1] * fx
    bot = values[y1][:, x0] * (1 - fx) + values[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def rgb_mask(fmap, frame, palette, mode: str = "bilinear") -> np.ndarray:
    """Weight the palette rendering of ``frame`` by the min-max normalized map."""
    frame = np.asarray(frame)
    rgb = render_frame(frame, palette).astype(np.float64)
    weight = upsample(numerics.minmax_normalize(fmap), frame.shape[0], frame.shape[1], mode)
    return np.clip(np.rint(weight[..., None] * rgb), 0, 255).astype(np.uint8)


def eigen_maps(layer: LayerMaps, top_k: int = 1):
    """Top right-singular vectors of the (channels, h*w) map stack, as (top_k, h, w).

    Returns the maps and all singular values.
    """
    c, h, w = layer.maps.shape
    if not 1 <= top_k <= min(c, h * w):
        raise ValueError(f"top_k must be in [1, {min(c, h * w)}], got {top_k}")
    _, s, vt = numerics.svd(layer.maps.reshape(c, h * w))
    vecs = numerics.fix_sign(vt[:top_k])
    return vecs.reshape(top_k, h, w), s


TIE_TOL = 1e-12


def _is_constant(v) -> bool:
    return not np.any(v - v.mean())


def pair_filters(model_a: VAE, model_b: VAE, layer: int, frame, centered: bool = True) -> FilterPairing:
    """Pair every filter of ``model_a`` with the closest filter of ``model_b``.

    Distances are correlation distances between flattened feature maps on
    ``frame``.  Correlation ignores scale, so proportional maps tie; ties
    (within 1e-12) go to the map closest in Euclidean distance, then to the
    lowest index in ``model_b``.  Filters with a constant map are left out
    on either side.
    """
    maps_a = extract_maps(model_a, frame)[layer - 1].maps
    maps_b = extract_maps(model_b, frame)[layer - 1].maps
    if maps_a.shape[1:] != maps_b.shape[1:]:
        raise ShapeError(f"layer {layer}: map shapes differ {maps_a.shape} vs {maps_b.shape}")
    flat_a = maps_a.reshape(maps_a.shape[0], -1)
    flat_b = maps_b.reshape(maps_b.shape[0], -1)
    ex_a = [u for u in range(len(flat_a)) if _is_constant(flat_a[u])]
    ex_b = [v for v in range(len(flat_b)) if _is_constant(flat_b[v])]
    if ex_a or ex_b:
        log.warning("layer %d: constant feature maps skipped (model A %s, model B %s)", layer, ex_a, ex_b)
    cand = [v for v in range(len(flat_b)) if v not in ex_b]
    pairs = []
    if cand:
        for u in range(len(flat_a)):
            if u in ex_a:
                continue
            dist = np.array([numerics.correlation_distance(flat_a[u], flat_b[v], centered) for v in cand])
            tied = np.flatnonzero(dist <= dist.min() + TIE_TOL)
            gap = [np.linalg.norm(flat_a[u] - flat_b[cand[t]]) for t in tied]
            best = int(tied[np.argmin(gap)])  # first minimum = lowest index
            pairs.append((u, cand[best], float(dist[best])))
    return FilterPairing(layer, pairs, ex_a, ex_b)


def layer_report(model_a: VAE, model_b: VAE, frame, palette, out_dir, n_pairs: int = 4,
                 n_eig: int = 1, max_layer: int = 3, mode: str = "bilinear") -> list[Path]:
    """Write paired RGB masks and eigen-maps for layers 1..``max_layer``.

    ``L<l>_pair<k>.ppm`` holds the k-th closest pair (model A above model B);
    ``L<l>_eig<k>.ppm`` holds the k-th eigen-map of each model, same layout.
    """
    out_dir = Path(out_dir)
    frame = np.asarray(frame)
    maps_a, maps_b = extract_maps(model_a, frame), extract_maps(model_b, frame)
    written = []
    for lm_a, lm_b in zip(maps_a, maps_b):
        if lm_a.layer > max_layer:
            continue
        pairing = pair_filters(model_a, model_b, lm_a.layer, frame)
        best = sorted(pairing.pairs, key=lambda p: (p[2], p[0]))[:n_pairs]
        for k, (u, v, _) in enumerate(best):
            panel = join_images([rgb_mask(lm_a.maps[u], frame, palette, mode),
                             rgb_mask(lm_b.maps[v], frame, palette, mode)], axis=0, gap=SEPARATOR)
            path = out_dir / f"L{lm_a.layer}_pair{k}.ppm"
            write_ppm(panel, path)
            written.append(path)
        k_eig = min(n_eig, *lm_a.maps.shape[:1], *lm_b.maps.shape[:1])
        eig_a, _ = eigen_maps(lm_a, k_eig)
        eig_b, _ = eigen_maps(lm_b, k_eig)
        for k in range(k_eig):
            panel = join_images([rgb_mask(eig_a[k], frame, palette, mode),
                             rgb_mask(eig_b[k], frame, palette, mode)], axis=0, gap=SEPARATOR)
            path = out_dir / f"L{lm_a.layer}_eig{k}.ppm"
            write_ppm(panel, path)
            written.append(path)
    return written
