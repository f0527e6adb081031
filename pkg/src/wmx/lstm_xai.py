"""Reading the LSTM: hidden-state traces, cell filters and relevance propagation.

The kappa filter ranks cells by how closely their time profile matches a
square pulse; the mu filter ranks them by how their time derivative lines
up with the derivative of one action component.  ``lrp`` pushes relevance
from the predicted latent back through one LSTM step onto its inputs, and
``relevance_to_pixels`` turns latent relevance into an image by decoding
perturbed latents.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from . import numerics
from .classes import CLASS_NAMES
from .latentgrid import LatentGrid
from .model_store import gray_to_rgb, render_frame, write_ppm
from .nets import LSTM, VAE, LstmState, StepCapture, rollout
from .parallel import pmap

LRP_EPS = 0.01
PIXEL_DELTA = 1.0
PIXEL_QUANTILE = 0.10


@dataclass
class HiddenTrace:
    values: np.ndarray  # (T, C), sigmoid of raw hidden state
    actions: np.ndarray  # (T, 3)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def cells(self) -> int:
        return self.values.shape[1]


@dataclass
class CellRanking:
    """Cells in rank order.  ``scores`` is the sort key and never decreases."""

    kind: str
    cells: np.ndarray
    scores: np.ndarray
    similarity: np.ndarray | None = None  # mu only: signed cosine per ranked cell
    params: dict = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)

    def top(self, n: int) -> "CellRanking":
        sim = None if self.similarity is None else self.similarity[:n]
        return CellRanking(self.kind, self.cells[:n], self.scores[:n], sim, self.params, self.excluded)


@dataclass
class RelevanceVector:
    R_z: np.ndarray
    R_a: np.ndarray
    R_h_prev: np.ndarray
    R_c_prev: np.ndarray
    layers: dict  # per-node relevance kept for inspection
    injected: float
    bias_absorbed: float
    leaked: float  # taken up by the eps stabilizer

    @property
    def on_inputs(self) -> float:
        return float(self.R_z.sum() + self.R_a.sum())

    @property
    def to_state(self) -> float:
        return float(self.R_h_prev.sum() + self.R_c_prev.sum())

    def balance(self) -> float:
        """Relevance not accounted for by inputs, state, biases and stabilizer (round-off)."""
        return self.injected - self.on_inputs - self.to_state - self.bias_absorbed - self.leaked


@dataclass
class RelevanceHeatmap:
    raw: np.ndarray  # (H, W) before normalization
    values: np.ndarray  # raw / max, or zeros
    scale: float
    quantile: float | None


def record_trace(model: LSTM, z0, actions, T: int | None = None) -> HiddenTrace:
    actions = np.asarray(actions, dtype=np.float64)
    T = len(actions) if T is None else T
    if T < 1 or T > len(actions):
        raise ValueError(f"T must be in [1, {len(actions)}], got {T}")
    ro = rollout(model, z0, actions[:T], feedback=True, keep_steps=False)
    return HiddenTrace(expit(ro.hidden), actions[:T].copy())


# -- kappa ------------------------------------------------------------------------

def pulse_distribution(length: int, r1: int, r2: int, eps: float = numerics.KL_EPS) -> np.ndarray:
    q = numerics.heaviside_pulse(length, r1, r2) + eps
    return q / q.sum()


def kappa_scores(values, r1: int, r2: int, eps: float = numerics.KL_EPS) -> np.ndarray:
    """KL(h_c || pulse) for every cell; both sides smoothed and normalized over time."""
    h = np.asarray(values, dtype=np.float64)
    if h.ndim != 2 or h.size == 0:
        raise ValueError("kappa needs a non-empty (T, C) trace")
    T = h.shape[0]
    if not 0 <= r1 < r2 <= T:
        raise ValueError(f"need 0 <= r1 < r2 <= T={T}, got r1={r1}, r2={r2}")
    q = pulse_distribution(T, r1, r2, eps)
    p = np.clip(h, 0.0, None) + eps
    p = p / p.sum(axis=0)
    terms = np.where(p > 0, p * np.log(p / q[:, None]), 0.0)
    return np.maximum(terms.sum(axis=0), 0.0)


def _rank(scores, kind, params, similarity=None, excluded=(), cells=None):
    cells = np.arange(len(scores)) if cells is None else np.asarray(cells)
    order = np.lexsort((cells, scores))  # ties broken by cell index
    sim = None if similarity is None else np.asarray(similarity)[order]
    return CellRanking(kind, cells[order], np.asarray(scores)[order], sim, params, list(excluded))


def kappa_filter(trace, r1: int, r2: int, top_n: int | None = None,
                 eps: float = numerics.KL_EPS) -> CellRanking:
    values = trace.values if isinstance(trace, HiddenTrace) else trace
    ranking = _rank(kappa_scores(values, r1, r2, eps), "kappa", {"r1": r1, "r2": r2})
    return ranking if top_n is None else ranking.top(top_n)


# -- mu ------------------------------------------------------------------------------

MU_MODES = ("min", "max_abs")


def mu_filter(trace, actions=None, component: int = 2, mode: str = "min",
              top_n: int | None = None) -> CellRanking:
    """Rank cells by the cosine between d h_c / dt and d a_j / dt.

    ``min`` ranks the most anti-aligned cells first; ``max_abs`` ranks by
    the magnitude of the cosine, so aligned and anti-aligned trackers both
    come first.  Cells whose trace does not change are excluded.
    """
    if mode not in MU_MODES:
        raise ValueError(f"mode must be one of {MU_MODES}, got {mode!r}")
    if isinstance(trace, HiddenTrace):
        values = trace.values
        actions = trace.actions if actions is None else actions
    else:
        values = trace
    h = np.asarray(values, dtype=np.float64)
    a = np.asarray(actions, dtype=np.float64)
    if h.shape[0] < 3:
        raise ValueError("mu needs at least 3 frames")
    if len(a) != h.shape[0]:
        raise ValueError(f"trace has {h.shape[0]} frames but {len(a)} actions")
    grad_a = numerics.central_gradient(a[:, component])
    grad_h = numerics.central_gradient(h, axis=0)
    norm_a = np.linalg.norm(grad_a)
    norm_h = np.linalg.norm(grad_h, axis=0)
    if norm_a == 0:
        raise ValueError(f"action component {component} is constant; its gradient is zero")
    keep = np.flatnonzero(norm_h > 0)
    excluded = [int(k) for k in np.flatnonzero(norm_h == 0)]
    if keep.size == 0:
        raise ValueError("every cell has a zero gradient")
    sim = np.clip((grad_a @ grad_h[:, keep]) / (norm_a * norm_h[keep]), -1.0, 1.0)
    key = sim if mode == "min" else -np.abs(sim)
    ranking = _rank(key, "mu", {"component": component, "mode": mode}, sim, excluded, keep)
    return ranking if top_n is None else ranking.top(top_n)


def write_ranking_csv(ranking: CellRanking, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["rank,cell,score" + (",similarity" if ranking.similarity is not None else "")]
    for n, (cell, score) in enumerate(zip(ranking.cells, ranking.scores)):
        row = f"{n},{int(cell)},{float(score)!r}"
        if ranking.similarity is not None:
            row += f",{float(ranking.similarity[n])!r}"
        lines.append(row)
    path.write_text("\n".join(lines) + "\n")


# -- relevance propagation ------------------------------------------------------------

def _stabilize(z, eps):
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def lrp_linear(weight, x, bias, relevance, eps: float = LRP_EPS):
    """Epsilon rule through ``z = weight @ x + bias``.

    Returns (input relevance, relevance absorbed by the bias, relevance
    absorbed by the stabilizer).  Units whose stabilized denominator is zero
    pass nothing down; their relevance is booked as absorbed.
    """
    w = np.asarray(weight, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    r = np.asarray(relevance, dtype=np.float64)
    z = w @ x + b
    den = _stabilize(z, eps)
    dead = den == 0
    s = np.where(dead, 0.0, r / np.where(dead, 1.0, den))
    r_in = x * (w.T @ s)
    bias_part = float(np.sum(b * s))
    leak = float(np.sum(r) - np.sum(r_in) - bias_part)
    return r_in, bias_part, leak


def lrp(model: LSTM, capture: StepCapture | None, eps: float = LRP_EPS, relevance=None) -> RelevanceVector:
    """Relevance of one step's inputs for its predicted latent.

    Every output component starts with relevance 1 (or ``relevance``).
    Linear maps use the epsilon rule; the products ``i * g`` and
    ``o * tanh(c)`` hand all relevance to the signal and none to the gate.
    """
    if capture is None:
        raise ValueError("lrp needs the forward capture of the step")
    c = model.cells
    d = model.latent_dim
    r_y = np.ones(d) if relevance is None else np.asarray(relevance, dtype=np.float64)
    injected = float(r_y.sum())
    absorbed = leaked = 0.0

    # head: y = W h + b
    r_h, b_part, e_part = lrp_linear(model.head_w, capture.h, model.head_b, r_y, eps)
    absorbed += b_part
    leaked += e_part
    # h = o * tanh(c): signal path only
    r_c = r_h
    # c = f * c_prev + i * g: two-term sum, no bias
    fc = capture.f * capture.c_prev
    ig = capture.i * capture.g
    den = _stabilize(capture.c, eps)
    dead = den == 0
    share = np.where(dead, 0.0, r_c / np.where(dead, 1.0, den))
    r_c_prev = fc * share
    r_g = ig * share
    leaked += float(r_c.sum() - r_c_prev.sum() - r_g.sum())
    # g = tanh(W_g [x, h_prev] + b_g)
    rows = slice(2 * c, 3 * c)
    w_g = np.concatenate([model.w_x[rows], model.w_h[rows]], axis=1)
    inp = np.concatenate([capture.x, capture.h_prev])
    r_in, b_part, e_part = lrp_linear(w_g, inp, model.bias[rows], r_g, eps)
    absorbed += b_part
    leaked += e_part
    zero = np.zeros(c)
    layers = {"y": r_y, "h": r_h, "c": r_c, "g": r_g, "i": zero, "f": zero, "o": zero,
              "c_prev": r_c_prev}
    return RelevanceVector(
        R_z=r_in[:d], R_a=r_in[d:model.w_x.shape[1]], R_h_prev=r_in[model.w_x.shape[1]:],
        R_c_prev=r_c_prev, layers=layers, injected=injected, bias_absorbed=absorbed, leaked=leaked,
    )


def lrp_step(model: LSTM, z, action, state: LstmState | None = None, eps: float = LRP_EPS) -> RelevanceVector:
    state = state or LstmState.zeros(model.cells)
    _, _, cap = model.step(state, z, action)
    return lrp(model, cap, eps)


# -- latent relevance to pixels ------------------------------------------------------

def perturbation_maps(decode: Callable[[np.ndarray], np.ndarray], z, delta: float = PIXEL_DELTA) -> np.ndarray:
    """D[i] = per-pixel L1 change of the decoded probabilities when z_i moves by ``delta``."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    z = np.asarray(z, dtype=np.float64)
    base = np.asarray(decode(z), dtype=np.float64)

    def one(i):
        zi = z.copy()
        zi[i] += delta
        diff = np.abs(np.asarray(decode(zi), dtype=np.float64) - base)
        return diff.sum(axis=0) if diff.ndim == 3 else diff

    return np.stack(pmap(one, range(z.size)))


def _top_quantile(d, q):
    # keep the pixels at or above the (1 - q) quantile of each map
    if q is None:
        return d
    if not 0 < q <= 1:
        raise ValueError(f"quantile must be in (0, 1], got {q}")
    flat = d.reshape(d.shape[0], -1)
    cut = np.quantile(flat, 1.0 - q, axis=1, method="higher")
    return np.where(flat >= cut[:, None], flat, 0.0).reshape(d.shape)


def combine_relevance(maps, R_z, quantile: float | None = PIXEL_QUANTILE) -> RelevanceHeatmap:
    maps = np.asarray(maps, dtype=np.float64)
    r = np.abs(np.asarray(R_z, dtype=np.float64))
    if r.shape != (maps.shape[0],):
        raise ValueError(f"relevance length {r.shape} does not match {maps.shape[0]} latent maps")
    raw = np.tensordot(r, _top_quantile(maps, quantile), axes=1)
    top = float(raw.max()) if raw.size else 0.0
    values = raw / top if top > 0 else np.zeros_like(raw)
    return RelevanceHeatmap(raw, values, top, quantile)


def relevance_to_pixels(decode, z, R_z, delta: float = PIXEL_DELTA,
                        quantile: float | None = PIXEL_QUANTILE) -> RelevanceHeatmap:
    """Spread latent relevance over the pixels each latent component moves.

    ``decode`` is a VAE (its probabilities are used) or any callable from a
    latent vector to a (C, H, W) or (H, W) array.
    """
    if isinstance(decode, VAE):
        decode = decode.decode_probs
    z = np.asarray(z, dtype=np.float64)
    if np.asarray(R_z).shape != z.shape:
        raise ValueError(f"relevance shape {np.asarray(R_z).shape} != latent shape {z.shape}")
    return combine_relevance(perturbation_maps(decode, z, delta), R_z, quantile)


def compare_saliency(heatmap, attention, fixations) -> tuple[float, float]:
    """(NSS at the fixations, Pearson against the attention map)."""
    h = heatmap.values if isinstance(heatmap, RelevanceHeatmap) else np.asarray(heatmap)
    attention = np.asarray(attention)
    fixations = np.asarray(fixations)
    if h.shape != attention.shape or h.shape != fixations.shape:
        raise ValueError(f"shape mismatch: {h.shape}, {attention.shape}, {fixations.shape}")
    return numerics.nss(h, fixations), numerics.pearson(h, attention)


def heatmap_image(heatmap: RelevanceHeatmap) -> np.ndarray:
    return gray_to_rgb(heatmap.values)


# -- latent grid probe --------------------------------------------------------------

def class_counts(frame, class_count: int) -> np.ndarray:
    return np.bincount(np.asarray(frame).ravel(), minlength=class_count)


def frame_anomalies(before, after, class_count: int) -> dict:
    a = class_counts(before, class_count)
    b = class_counts(after, class_count)
    names = CLASS_NAMES if class_count == len(CLASS_NAMES) else [str(k) for k in range(class_count)]
    delta = b - a
    return {
        "vanished": [names[k] for k in np.flatnonzero((a > 0) & (b == 0))],
        "appeared": [names[k] for k in np.flatnonzero((a == 0) & (b > 0))],
        "count_delta": {names[k]: int(delta[k]) for k in np.flatnonzero(delta)},
    }


def grid_probe(lstm: LSTM, vae: VAE, grid: LatentGrid, action, out_dir, palette,
               eps: float = LRP_EPS, delta: float = PIXEL_DELTA,
               quantile: float | None = PIXEL_QUANTILE) -> dict:
    """Predict the next frame from every grid cell and report class changes.

    Writes ``pred_r<row>_c<col>.ppm`` and ``lrp_r<row>_c<col>.ppm`` per cell
    and ``anomaly_report.json``; returns the report.
    """
    out_dir = Path(out_dir)
    cc = vae.class_count
    cells = []
    for r in range(grid.rows):
        for col in range(grid.cols):
            z_in = grid.latents[r, col]
            state, z_next, cap = lstm.step(LstmState.zeros(lstm.cells), z_in, action)
            frame_in = vae.decode(z_in).frame
            frame_out = vae.decode(z_next).frame
            rel = lrp(lstm, cap, eps)
            heat = relevance_to_pixels(vae, z_in, rel.R_z, delta, quantile)
            write_ppm(render_frame(frame_out, palette), out_dir / f"pred_r{r}_c{col}.ppm")
            write_ppm(heatmap_image(heat), out_dir / f"lrp_r{r}_c{col}.ppm")
            entry = {"row": r, "col": col, "increment": grid.increments[r], "region": col}
            entry.update(frame_anomalies(frame_in, frame_out, cc))
            cells.append(entry)
    flagged = sum(1 for e in cells if e["vanished"] or e["appeared"])
    report = {"cells": cells, "anomaly_count": flagged}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "anomaly_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
