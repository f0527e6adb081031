"""Synthetic street-crossing scenario.

The crossing action schedule has eight segments over frames 0-399 with
linear ramps inside bracketed ranges.  Frames are rendered by a small ray
caster over a flat street scene (sidewalks, road, zebra crossing, building
facades, box-shaped cars/pedestrians/poles) seen from the pedestrian's eyes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .classes import CLASS, CLASS_COUNT, FRAME_HEIGHT, FRAME_WIDTH, default_palette
from .model_store import FrameDataset, _num


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # inclusive
    a0: int
    a1: tuple[float, float]
    a2: tuple[float, float]
    description: str = ""


@dataclass(frozen=True)
class ActionSchedule:
    segments: tuple[Segment, ...]

    @property
    def length(self) -> int:
        return self.segments[-1].end + 1

    def at(self, t: int) -> tuple[int, float, float]:
        for seg in self.segments:
            if seg.start <= t <= seg.end:
                span = seg.end - seg.start
                u = 0.0 if span == 0 else (t - seg.start) / span
                return (seg.a0, _lerp(seg.a1, u), _lerp(seg.a2, u))
        raise ValueError(f"frame {t} outside schedule [0, {self.length - 1}]")

    def actions(self, T: int | None = None) -> np.ndarray:
        T = self.length if T is None else T
        return np.array([self.at(t) for t in range(T)], dtype=np.float64)


def _lerp(rng, u):
    a, b = rng
    if a == b:
        return float(a)
    return a * (1.0 - u) + b * u


def crossing_schedule() -> ActionSchedule:
    """The eight-segment street-crossing schedule (a0 flag, a1 body, a2 head)."""
    return ActionSchedule((
        Segment(0, 80, 1, (180, 180), (0, 0), "Walk(Sidewalk), LookTo(Sidewalk)"),
        Segment(81, 118, 0, (180, 270), (0, -48.63), "Turn(Right), LookTo(Street)"),
        Segment(119, 135, 0, (270, 270), (-48.63, -0.66), "Turn(Head,Right), LookTo(Crosswalk)"),
        Segment(136, 158, 0, (270, 270), (-0.66, -0.66), "LookTo(Crosswalk)"),
        Segment(159, 233, 1, (270, 270), (-0.66, 85.54), "Walk(Crosswalk), LookTo(Street)"),
        Segment(234, 337, 1, (270, 270), (85.54, 0.24), "Walk(Crosswalk), LookTo(Crosswalk)"),
        Segment(338, 377, 0, (270, 180), (0.24, 0.24), "Turn(Body,Left), LookTo(Sidewalk)"),
        Segment(378, 399, 1, (180, 180), (0.24, 0.24), "Walk(Sidewalk), LookTo(Sidewalk)"),
    ))


# -- scene -------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box standing on the ground, optionally moving along x."""

    cls: int
    x: float
    y: float
    sx: float
    sy: float
    height: float
    vx: float = 0.0
    stop_x: float | None = None  # moving boxes wait here during [stop_from, stop_until)
    stop_from: int = 0
    stop_until: int = 0

    def x_at(self, t: int) -> float:
        free = self.x + self.vx * t
        if self.stop_x is None or self.vx == 0.0:
            return free
        arrive = (self.stop_x - self.x) / self.vx
        if arrive < self.stop_from or arrive >= self.stop_until or t <= arrive:
            return free
        if t < self.stop_until:
            return self.stop_x
        return self.stop_x + self.vx * (t - self.stop_until)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    empty: bool = False
    sidewalk_width: float = 4.0
    street_width: float = 12.5
    building_height: float = 12.0
    crosswalk_half_width: float = 2.5
    stripe: float = 0.5
    speed: float = 0.07
    start: tuple[float, float] = (0.0, 0.05)
    eye_height: float = 1.7
    pitch_deg: float = -15.0
    hfov_deg: float = 90.0
    vfov_deg: float = 60.0
    height: int = FRAME_HEIGHT
    width: int = FRAME_WIDTH
    n_pedestrians: int = 6
    n_poles: int = 8
    extra: tuple[Box, ...] = field(default_factory=tuple)


def pedestrian_path(schedule: ActionSchedule, scene: SceneSpec, T: int) -> np.ndarray:
    """Position after the movement of each step (T, 2)."""
    acts = schedule.actions(T)
    pos = np.zeros((T, 2))
    p = np.array(scene.start, dtype=np.float64)
    for t in range(T):
        a0, a1, _ = acts[t]
        if a0:
            rad = math.radians(a1)
            p = p + scene.speed * np.array([math.cos(rad), math.sin(rad)])
        pos[t] = p
    return pos


class Renderer:
    """Ray caster for one scene; pure in (scene, pose, t)."""

    def __init__(self, scene: SceneSpec, crosswalk_x: float):
        self.scene = scene
        self.crosswalk_x = crosswalk_x
        self.boxes = () if scene.empty else self._populate()
        h, w = scene.height, scene.width
        cols = (np.arange(w) + 0.5) / w
        rows = (np.arange(h) + 0.5) / h
        self.azimuth_offset = np.radians((0.5 - cols) * scene.hfov_deg)[None, :].repeat(h, 0)
        elev = np.radians(scene.pitch_deg + (0.5 - rows) * scene.vfov_deg)
        self.tan_e = np.tan(elev)[:, None].repeat(w, 1)

    def _populate(self):
        s = self.scene
        rng = np.random.default_rng(s.seed)
        cx, street = self.crosswalk_x, s.street_width
        near_lane, far_lane = -street * 0.25, -street * 0.75
        boxes = [
            # near-lane car waits before the crosswalk while the pedestrian crosses
            Box(CLASS["car"], cx + 60.0, near_lane - 0.9, 4.5, 1.8, 1.5, vx=-0.35,
                stop_x=cx + s.crosswalk_half_width + 2.0, stop_from=150, stop_until=340),
            Box(CLASS["car"], cx - 70.0, far_lane - 0.9, 4.5, 1.8, 1.5, vx=0.4),
            Box(CLASS["cyclist"], cx - 40.0, far_lane + 1.2, 1.8, 0.6, 1.7, vx=0.15),
            Box(CLASS["traffic_light"], cx - s.crosswalk_half_width - 0.6, 0.3, 0.3, 0.3, 3.5),
        ]
        for _ in range(s.n_pedestrians):
            side = rng.integers(0, 2)
            y = rng.uniform(0.8, s.sidewalk_width - 0.8)
            y = y if side == 0 else -street - y
            boxes.append(Box(CLASS["pedestrian"], cx + rng.uniform(-30, 30), y - 0.25, 0.5, 0.5, 1.8,
                             vx=rng.choice([-0.03, 0.0, 0.03])))
        for n in range(s.n_poles):
            x = cx - 35.0 + 10.0 * n + rng.uniform(-1, 1)
            boxes.append(Box(CLASS["pole"], x, 0.2, 0.25, 0.25, 5.0))
            boxes.append(Box(CLASS["vegetation"], x + 4.0, s.sidewalk_width - 1.2, 1.2, 1.2, 3.0))
        return tuple(boxes) + tuple(s.extra)

    def ground_class(self, px, py):
        s = self.scene
        out = np.full(px.shape, CLASS["sidewalk"], dtype=np.uint8)
        road = (py < 0) & (py >= -s.street_width)
        out[road] = CLASS["road"]
        if not s.empty:
            dx = px - self.crosswalk_x
            stripes = road & (np.abs(dx) <= s.crosswalk_half_width) & (
                np.floor(dx / s.stripe + 0.5).astype(int) % 2 == 0)
            out[stripes] = CLASS["crosswalk"]
        return out

    def render(self, pos, yaw_deg: float, t: int) -> np.ndarray:
        s = self.scene
        phi = math.radians(yaw_deg) + self.azimuth_offset
        dx, dy = np.cos(phi), np.sin(phi)
        tan_e = self.tan_e
        far = 1e6
        # ground
        with np.errstate(divide="ignore"):
            d_ground = np.where(tan_e < 0, s.eye_height / -tan_e, far)
        depth = d_ground.copy()
        frame = np.full(tan_e.shape, CLASS["sky"], dtype=np.uint8)
        hit = tan_e < 0
        frame[hit] = self.ground_class(pos[0] + d_ground[hit] * dx[hit], pos[1] + d_ground[hit] * dy[hit])
        # facades: near side at y = sidewalk_width, far side behind the opposite sidewalk
        y_near, y_far = s.sidewalk_width, -s.street_width - s.sidewalk_width
        with np.errstate(divide="ignore", invalid="ignore"):
            d_wall = np.where(dy > 1e-9, (y_near - pos[1]) / dy,
                              np.where(dy < -1e-9, (y_far - pos[1]) / dy, far))
        z_wall = s.eye_height + d_wall * tan_e
        wall = (d_wall > 0) & (d_wall < depth) & (z_wall <= s.building_height)
        frame[wall] = CLASS["building"]
        depth = np.where(wall, d_wall, depth)
        for box in self.boxes:
            bx = box.x_at(t)
            tn, tf = _slab(pos, dx, dy, (bx, bx + box.sx), (box.y, box.y + box.sy))
            zn = s.eye_height + tn * tan_e
            zf = s.eye_height + tf * tan_e
            zlo, zhi = np.minimum(zn, zf), np.maximum(zn, zf)
            m = (tf >= tn) & (tf > 0) & (zhi >= 0) & (zlo <= box.height) & (np.maximum(tn, 0) < depth)
            frame[m] = box.cls
            depth = np.where(m, np.maximum(tn, 0), depth)
        return frame


def _slab(pos, dx, dy, xr, yr):
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (xr[0] - pos[0]) / dx
        tx2 = (xr[1] - pos[0]) / dx
        ty1 = (yr[0] - pos[1]) / dy
        ty2 = (yr[1] - pos[1]) / dy
    inside_x = (pos[0] >= xr[0]) & (pos[0] <= xr[1])
    inside_y = (pos[1] >= yr[0]) & (pos[1] <= yr[1])
    tminx = np.where(np.abs(dx) < 1e-12, np.where(inside_x, -np.inf, np.inf), np.minimum(tx1, tx2))
    tmaxx = np.where(np.abs(dx) < 1e-12, np.where(inside_x, np.inf, -np.inf), np.maximum(tx1, tx2))
    tminy = np.where(np.abs(dy) < 1e-12, np.where(inside_y, -np.inf, np.inf), np.minimum(ty1, ty2))
    tmaxy = np.where(np.abs(dy) < 1e-12, np.where(inside_y, np.inf, -np.inf), np.maximum(ty1, ty2))
    return np.maximum(tminx, tminy), np.minimum(tmaxx, tmaxy)


def crosswalk_x(schedule: ActionSchedule, scene: SceneSpec) -> float:
    """x where the pedestrian starts crossing: first step heading into the road."""
    path = pedestrian_path(schedule, scene, schedule.length)
    acts = schedule.actions()
    for t in range(schedule.length):
        if acts[t, 0] and abs(acts[t, 1] - 270.0) < 1e-9:
            return float(path[t, 0])
    return float(path[-1, 0])


def render_sequence(schedule: ActionSchedule, scene: SceneSpec | None = None,
                    T: int | None = None) -> FrameDataset:
    scene = scene or SceneSpec()
    T = schedule.length if T is None else T
    if not 1 <= T <= schedule.length:
        raise ValueError(f"T must be in [1, {schedule.length}], got {T}")
    renderer = Renderer(scene, crosswalk_x(schedule, scene))
    path = pedestrian_path(schedule, scene, T)
    acts = schedule.actions(T)
    frames = np.stack([renderer.render(path[t], acts[t, 1] + acts[t, 2], t) for t in range(T)])
    return FrameDataset(frames, CLASS_COUNT, default_palette())


def sample_views(n: int, seed: int = 0, scene: SceneSpec | None = None) -> FrameDataset:
    """``n`` frames from random poses along the crossing route (desk-scale SVD data)."""
    scene = scene or SceneSpec(seed=seed)
    schedule = crossing_schedule()
    renderer = Renderer(scene, crosswalk_x(schedule, scene))
    path = pedestrian_path(schedule, scene, schedule.length)
    rng = np.random.default_rng(seed)
    frames = np.empty((n, scene.height, scene.width), dtype=np.uint8)
    for k in range(n):
        t = int(rng.integers(0, schedule.length))
        pos = path[t] + rng.normal(0, 0.3, 2)
        pos[1] = min(pos[1], scene.sidewalk_width - 0.3)
        frames[k] = renderer.render(pos, float(rng.uniform(0, 360)), t)
    return FrameDataset(frames, CLASS_COUNT, default_palette())


# -- attention stand-in ---------------------------------------------------------

ATTENTION_WEIGHTS = {
    "car": 1.0, "cyclist": 1.0, "pedestrian": 0.9, "traffic_light": 0.7,
    "crosswalk": 0.5, "road": 0.2,
}


def attention_maps(frames: np.ndarray, sigma: float = 3.0, fixation_fraction: float = 0.02):
    """Class-weighted, blurred attention maps and top-fraction fixation masks.

    A deterministic stand-in for maps produced by an external driver
    attention model; the analysis code only consumes the files.
    """
    frames = np.asarray(frames)
    weight = np.zeros(CLASS_COUNT)
    for name, w in ATTENTION_WEIGHTS.items():
        weight[CLASS[name]] = w
    att = np.empty(frames.shape)
    fix = np.zeros(frames.shape, dtype=bool)
    h, w = frames.shape[1:]
    yy, xx = np.mgrid[0:h, 0:w]
    center = np.exp(-(((yy - h / 2) / h) ** 2 + ((xx - w / 2) / w) ** 2) * 4.0)
    n_fix = max(1, int(round(fixation_fraction * h * w)))
    for k, frame in enumerate(frames):
        a = gaussian_filter(weight[frame], sigma) + 0.1 * center
        a = a / a.max()
        att[k] = a
        top = np.argsort(-a.ravel(), kind="stable")[:n_fix]
        fix[k].ravel()[top] = True
    return att, fix


def quantize_attention(att: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> bytes 0..254 (FRM1 files with class_count 255)."""
    return np.rint(np.clip(att, 0, 1) * 254).astype(np.uint8)


def write_actions_csv(schedule: ActionSchedule, path, T: int | None = None) -> None:
    acts = schedule.actions(T)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["frame", "a0", "a1", "a2"])
        for t, (a0, a1, a2) in enumerate(acts):
            out.writerow([t, int(a0), _num(a1), _num(a2)])


def read_actions_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame", "a0", "a1", "a2"]:
        raise ValueError(f"{path}: expected header frame,a0,a1,a2")
    acts = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    frames = [int(r[0]) for r in rows[1:]]
    if frames != list(range(len(frames))):
        raise ValueError(f"{path}: frame column must count up from 0")
    return acts
