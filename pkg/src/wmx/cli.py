"""Command-line entry point: ``wmx <group> <action> [options]``.

Every run writes ``config.json`` (the resolved parameters) and
``run_manifest.json`` (inputs, parameters, produced files, timestamps) into
its output directory.  Parameters come from the built-in defaults, then a
``--config`` JSON file, then explicit flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import featviz, latentgrid, lstm_xai, nets, rg_ae, scenario
from .classes import default_palette
from .errors import WmxError
from .model_store import (
    FrameDataset, container_paths, fnv1a64, frame_paths, load_frames, load_model, read_trace,
    render_frame, save_bundle, save_frames, save_model, write_ppm, write_trace,
)

log = logging.getLogger("wmx")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
MANIFEST_NAME = "run_manifest.json"
CONFIG_NAME = "config.json"
LOCK_NAME = ".wmx.lock"


@dataclass
class RunConfig:
    seed: int = 0
    frames: int = 400
    views: int = 0
    # singular-basis autoencoder
    k: int = 50
    cutoff: int | None = 175
    one_hot: bool = False
    # networks
    latent_dim: int = 50
    cells: int = 512
    pulse_cell: int = 134
    track_cell: int = 100
    channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    # latent grid
    region_size: int = 10
    increments: list[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    # cell filters
    r1: int = 80
    r2: int = 159
    component: int = 2
    mu_mode: str = "min"
    top_n: int = 10
    # relevance
    eps: float = lstm_xai.LRP_EPS
    delta: float = lstm_xai.PIXEL_DELTA
    quantile: float | None = lstm_xai.PIXEL_QUANTILE
    steps: list[int] = field(default_factory=lambda: [159])
    frame_index: int = 0
    top_k: int = 4
    emit_images: bool = True

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise WmxError(f"{path}: malformed config ({exc})") from exc
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise WmxError(f"{path}: unknown config keys {unknown}")
        return cls(**data)


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, out: Path, command: str, config: RunConfig, argv):
        self.out = out
        self.command = command
        self.config = config
        self.argv = list(argv)
        self.inputs: list[Path] = []
        self.artifacts: list[Path] = []
        self.started = time.time()

    def input(self, path) -> Path:
        self.inputs.append(Path(path))
        return Path(path)

    def produced(self, *paths) -> None:
        self.artifacts.extend(Path(p) for p in paths)

    def finish(self) -> None:
        cfg_path = self.out / CONFIG_NAME
        cfg_path.write_text(json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n")

        def entry(p):
            p = Path(p)
            d = {"path": str(p)}
            if p.is_file():
                d["fnv1a64"] = f"{fnv1a64(p.read_bytes()):016x}"
            return d

        manifest = {
            "command": self.command,
            "argv": self.argv,
            "parameters": asdict(self.config),
            "inputs": [entry(p) for p in _expand(self.inputs)],
            "artifacts": [entry(p) for p in _expand(self.artifacts + [cfg_path])],
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.started)),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        (self.out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def _expand(paths):
    # containers and frame files are pairs on disk
    out = []
    for p in paths:
        s = str(p)
        if s.endswith(".manifest.json") or s.endswith(".weights.bin"):
            out += list(container_paths(p))
        elif s.endswith(".frm"):
            # the palette sidecar exists only when the dataset carries one
            out += [q for q in frame_paths(p) if q.exists() or q.suffix == ".frm"]
        else:
            out.append(p)
    seen, uniq = set(), []
    for p in out:
        if p not in seen:
            seen.add(p)
            uniq.append(p)
    return uniq


# -- shared loaders ------------------------------------------------------------

def _frames(run: Run, path) -> FrameDataset:
    return load_frames(run.input(path))


def _palette(ds: FrameDataset):
    return ds.palette or default_palette()


def _vae(run: Run, path) -> nets.VAE:
    return nets.VAE.from_store(*load_model(run.input(path)))


def _lstm(run: Run, path) -> nets.LSTM:
    return nets.LSTM.from_store(*load_model(run.input(path)))


def _actions(run: Run, path) -> np.ndarray:
    return scenario.read_actions_csv(run.input(path))


def _model_path(base) -> str:
    return str(container_paths(base)[0])


# -- commands ------------------------------------------------------------------------

def cmd_scenario_gen(run: Run, args):
    cfg = run.config
    sched = scenario.crossing_schedule()
    T = cfg.frames
    ds = scenario.render_sequence(sched, scenario.SceneSpec(seed=cfg.seed, empty=args.empty), T)
    out = run.out
    save_frames(ds, out / "scenario.frm")
    scenario.write_actions_csv(sched, out / "actions.csv", T)
    att, fix = scenario.attention_maps(ds.frames)
    save_frames(FrameDataset(scenario.quantize_attention(att), 255), out / "attention.frm")
    save_frames(FrameDataset(fix.astype(np.uint8), 2), out / "fixations.frm")
    run.produced(out / "scenario.frm", out / "actions.csv", out / "attention.frm", out / "fixations.frm")
    if cfg.views:
        views = scenario.sample_views(cfg.views, cfg.seed)
        save_frames(views, out / "views.frm")
        run.produced(out / "views.frm")
    if cfg.emit_images:
        write_ppm(render_frame(ds.frames[0], ds.palette), out / "frame_0.ppm")
        run.produced(out / "frame_0.ppm")


def cmd_models_init(run: Run, args):
    """Untrained stand-ins: two convolutional VAEs and a hand-wired LSTM."""
    cfg = run.config
    ch = tuple(cfg.channels)
    vae_a = nets.init_vae(cfg.seed, ch, cfg.latent_dim)
    vae_b = nets.init_vae(cfg.seed + 1, ch, cfg.latent_dim)
    designs = [nets.CellDesign("pulse", cfg.pulse_cell, cfg.r1, cfg.r2),
               nets.CellDesign("track", cfg.track_cell, component=cfg.component)]
    lstm = nets.hand_wire(nets.WiringSpec(cfg.cells, cfg.latent_dim, designs, seed=cfg.seed,
                                          horizon=cfg.frames))
    for name, model in (("vae_a", vae_a), ("vae_b", vae_b), ("lstm", lstm)):
        save_model(*model.to_store(), run.out / name)
        run.produced(_model_path(run.out / name))


def cmd_rgae_fit(run: Run, args):
    cfg = run.config
    ds = _frames(run, args.frames)
    basis = rg_ae.fit(ds.frames, cfg.k, cfg.cutoff, ds.class_count, one_hot=cfg.one_hot,
                      reorthonormalize=args.reorthonormalize, center=args.center)
    rg_ae.save_basis(basis, run.out / "rgae")
    run.produced(_model_path(run.out / "rgae"))


def cmd_rgae_encode(run: Run, args):
    basis = rg_ae.load_basis(run.input(args.model))
    ds = _frames(run, args.frames)
    z = rg_ae.encode_frames(basis, ds.frames)
    save_bundle({"latents": z}, run.out / "latents", {"source": "rgae"})
    run.produced(_model_path(run.out / "latents"))


def cmd_rgae_decode(run: Run, args):
    basis = rg_ae.load_basis(run.input(args.model))
    _, tensors = load_model(run.input(args.latents))
    frames = rg_ae.render(basis, rg_ae.decode(basis, tensors["latents"]))
    save_frames(FrameDataset(frames, basis.class_count, default_palette()), run.out / "decoded.frm")
    run.produced(run.out / "decoded.frm")


def cmd_rgae_eval(run: Run, args):
    basis = rg_ae.load_basis(run.input(args.model))
    ds = _frames(run, args.frames)
    report = {
        "frames": ds.count, "k": basis.k, "cutoff": basis.cutoff,
        "mean_kl": rg_ae.evaluate(basis, ds.frames),
        "frobenius": rg_ae.frobenius_error(basis, ds.frames),
        "reference_kl": rg_ae.REFERENCE_KL,
    }
    path = run.out / "rgae_eval.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    run.produced(path)


def cmd_rgae_viz(run: Run, args):
    basis = rg_ae.load_basis(run.input(args.model))
    run.produced(*rg_ae.visualize_basis(basis, min(run.config.top_k, basis.k), run.out))


def cmd_featviz_report(run: Run, args):
    ds = _frames(run, args.frames)
    a, b = _vae(run, args.model_a), _vae(run, args.model_b)
    frame = ds.frames[run.config.frame_index]
    run.produced(*featviz.layer_report(a, b, frame, _palette(ds), run.out, n_pairs=run.config.top_k))


def cmd_latent_grid(run: Run, args):
    cfg = run.config
    ds = _frames(run, args.frames)
    frame = ds.frames[cfg.frame_index]
    if args.vae:
        vae = _vae(run, args.vae)
        z = vae.encode_frame(frame)
        decode, name = (lambda v: vae.decode(v).frame), "vae"
    elif args.rgae:
        basis = rg_ae.load_basis(run.input(args.rgae))
        z = rg_ae.encode_frames(basis, frame[None])[0]
        decode, name = (lambda v: rg_ae.render(basis, rg_ae.decode(basis, v))[0]), "rgae"
    else:
        raise WmxError("latent grid needs --vae or --rgae")
    grid = latentgrid.build_grid(decode, z, cfg.region_size, cfg.increments)
    cells = np.stack([c for row in grid.cells for c in row]).astype(np.uint8)
    save_frames(FrameDataset(cells, ds.class_count, ds.palette), run.out / f"grid_{name}.frm")
    run.produced(run.out / f"grid_{name}.frm")
    if cfg.emit_images:
        write_ppm(latentgrid.grid_montage(grid, _palette(ds)), run.out / f"grid_{name}.ppm")
        run.produced(run.out / f"grid_{name}.ppm")


def _z0(run: Run, args):
    if args.vae and args.frames:
        ds = _frames(run, args.frames)
        return _vae(run, args.vae).encode_frame(ds.frames[0])
    return np.zeros(run.config.latent_dim)


def cmd_cells_trace(run: Run, args):
    lstm = _lstm(run, args.lstm)
    acts = _actions(run, args.actions)
    T = min(run.config.frames, len(acts))
    z0 = _z0(run, args) if lstm.latent_dim == run.config.latent_dim else np.zeros(lstm.latent_dim)
    trace = lstm_xai.record_trace(lstm, z0, acts, T)
    write_trace(run.out / "trace.csv", trace.values, trace.actions)
    run.produced(run.out / "trace.csv")


def cmd_cells_kappa(run: Run, args):
    cfg = run.config
    hidden, _ = read_trace(run.input(args.trace))
    ranking = lstm_xai.kappa_filter(hidden, cfg.r1, cfg.r2, cfg.top_n)
    lstm_xai.write_ranking_csv(ranking, run.out / "kappa_top.csv")
    run.produced(run.out / "kappa_top.csv")


def cmd_cells_mu(run: Run, args):
    cfg = run.config
    hidden, acts = read_trace(run.input(args.trace))
    ranking = lstm_xai.mu_filter(hidden, acts, cfg.component, cfg.mu_mode, cfg.top_n)
    if ranking.excluded:
        log.warning("cells with a constant trace left out of the ranking: %s", ranking.excluded)
    lstm_xai.write_ranking_csv(ranking, run.out / "mu_top.csv")
    run.produced(run.out / "mu_top.csv")


def cmd_lrp_step(run: Run, args):
    """Teacher-forced rollout over the encoded scenario, LRP at the requested steps."""
    cfg = run.config
    ds = _frames(run, args.frames)
    vae, lstm = _vae(run, args.vae), _lstm(run, args.lstm)
    acts = _actions(run, args.actions)
    steps = sorted(set(cfg.steps))
    if not steps or steps[0] < 0 or steps[-1] >= min(ds.count, len(acts)):
        raise WmxError(f"steps must lie in [0, {min(ds.count, len(acts))})")
    T = steps[-1] + 1
    z_in = np.stack([vae.encode_frame(f) for f in ds.frames[:T]])
    ro = nets.rollout(lstm, z_in[0], acts[:T], feedback=False, z_inputs=z_in)
    maps, summary = [], []
    for t in steps:
        rel = lstm_xai.lrp(lstm, ro.steps[t], cfg.eps)
        heat = lstm_xai.relevance_to_pixels(vae, z_in[t], rel.R_z, cfg.delta, cfg.quantile)
        maps.append(heat.values)
        summary.append({"step": t, "R_z": rel.R_z.tolist(), "R_a": rel.R_a.tolist(),
                        "injected": rel.injected, "on_inputs": rel.on_inputs,
                        "to_state": rel.to_state, "bias_absorbed": rel.bias_absorbed,
                        "leaked": rel.leaked})
        if cfg.emit_images:
            write_ppm(lstm_xai.heatmap_image(heat), run.out / f"lrp_{t}.ppm")
            run.produced(run.out / f"lrp_{t}.ppm")
    save_bundle({"heatmaps": np.stack(maps), "steps": np.asarray(steps, dtype=np.float32)},
                run.out / "heatmaps", {"eps": cfg.eps, "delta": cfg.delta, "quantile": cfg.quantile})
    (run.out / "relevance.json").write_text(json.dumps(summary, indent=2) + "\n")
    run.produced(_model_path(run.out / "heatmaps"), run.out / "relevance.json")


def cmd_lrp_probe(run: Run, args):
    cfg = run.config
    ds = _frames(run, args.frames)
    vae, lstm = _vae(run, args.vae), _lstm(run, args.lstm)
    acts = _actions(run, args.actions)
    t = cfg.frame_index
    z = vae.encode_frame(ds.frames[t])
    grid = latentgrid.build_grid(lambda v: vae.decode(v).frame, z, cfg.region_size, cfg.increments)
    lstm_xai.grid_probe(lstm, vae, grid, acts[t], run.out, _palette(ds), cfg.eps, cfg.delta, cfg.quantile)
    names = [f"{kind}_r{r}_c{c}.ppm" for r in range(grid.rows) for c in range(grid.cols)
             for kind in ("pred", "lrp")]
    run.produced(*(run.out / n for n in names), run.out / "anomaly_report.json")


def cmd_saliency_eval(run: Run, args):
    _, tensors = load_model(run.input(args.heatmaps))
    heat = tensors["heatmaps"]
    steps = tensors["steps"].astype(int)
    att = _frames(run, args.attention).frames.astype(np.float64) / 254.0
    fix = _frames(run, args.fixations).frames.astype(bool)
    rows = []
    for t, h in zip(steps, heat):
        nss, r = lstm_xai.compare_saliency(h, att[t], fix[t])
        rows.append({"step": int(t), "nss": nss, "pearson": r})
    report = {
        "frames": rows,
        "mean_nss": float(np.mean([r["nss"] for r in rows])),
        "mean_pearson": float(np.mean([r["pearson"] for r in rows])),
        "reference": {"mean_nss": 0.53, "mean_pearson": 0.46},
    }
    (run.out / "saliency.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    run.produced(run.out / "saliency.json")


DEMO_DEFAULTS = dict(frames=160, views=120, k=40, cutoff=175, cells=64, pulse_cell=34, track_cell=10, channels=[4, 8, 8, 8],
                     steps=[80, 120], frame_index=120, top_k=2, top_n=10)


def cmd_demo(run: Run, args):
    """Desk-scale pass through every stage, each in its own subdirectory."""
    out = run.out
    cfg_path = out / "demo_config.json"
    cfg = asdict(run.config)
    cfg_path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    s, m = out / "scenario", out / "models"
    plan = [
        ["scenario", "gen", "--out", str(s)],
        ["models", "init", "--out", str(m)],
        ["rgae", "fit", "--frames", str(s / "views.frm"), "--out", str(out / "rgae")],
        ["rgae", "eval", "--model", str(out / "rgae" / "rgae"), "--frames", str(s / "scenario.frm"),
         "--out", str(out / "rgae_eval")],
        ["rgae", "viz", "--model", str(out / "rgae" / "rgae"), "--out", str(out / "rgae_viz")],
        ["featviz", "report", "--model-a", str(m / "vae_a"), "--model-b", str(m / "vae_b"),
         "--frames", str(s / "scenario.frm"), "--out", str(out / "featviz")],
        ["latent", "grid", "--vae", str(m / "vae_a"), "--frames", str(s / "scenario.frm"),
         "--out", str(out / "grid")],
        ["cells", "trace", "--lstm", str(m / "lstm"), "--actions", str(s / "actions.csv"),
         "--vae", str(m / "vae_a"), "--frames", str(s / "scenario.frm"), "--out", str(out / "trace")],
        ["cells", "kappa", "--trace", str(out / "trace" / "trace.csv"), "--out", str(out / "kappa")],
        ["cells", "mu", "--trace", str(out / "trace" / "trace.csv"), "--mu-mode", "max_abs",
         "--out", str(out / "mu")],
        ["lrp", "step", "--lstm", str(m / "lstm"), "--vae", str(m / "vae_a"), "--frames", str(s / "scenario.frm"),
         "--actions", str(s / "actions.csv"), "--out", str(out / "lrp")],
        ["lrp", "probe", "--lstm", str(m / "lstm"), "--vae", str(m / "vae_a"), "--frames", str(s / "scenario.frm"),
         "--actions", str(s / "actions.csv"), "--out", str(out / "probe")],
        ["saliency", "eval", "--heatmaps", str(out / "lrp" / "heatmaps"), "--attention", str(s / "attention.frm"),
         "--fixations", str(s / "fixations.frm"), "--out", str(out / "saliency")],
    ]
    for argv in plan:
        code = main(argv + ["--config", str(cfg_path)])
        if code != EXIT_OK:
            raise WmxError(f"demo stage {' '.join(argv[:2])} failed with exit code {code}")
        run.produced(Path(argv[argv.index("--out") + 1]))


# -- argument parsing ------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--config", type=Path, help="JSON file with run parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames-count", dest="frames_count", type=int, help="number of frames to generate or trace")
    p.add_argument("--views", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--cutoff", type=int)
    p.add_argument("--no-cutoff", action="store_true")
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--cells", type=int)
    p.add_argument("--region-size", type=int)
    p.add_argument("--increments", type=float, nargs="+")
    p.add_argument("--r1", type=int)
    p.add_argument("--r2", type=int)
    p.add_argument("--component", type=int, choices=(0, 1, 2))
    p.add_argument("--mu-mode", choices=lstm_xai.MU_MODES)
    p.add_argument("--top-n", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--quantile", type=float)
    p.add_argument("--steps", type=int, nargs="+")
    p.add_argument("--frame-index", type=int)
    p.add_argument("--no-images", action="store_true")


COMMANDS = {
    "scenario": {"gen": (cmd_scenario_gen, [("--empty", {"action": "store_true"})])},
    "models": {"init": (cmd_models_init, [("--pulse-cell", {"type": int}), ("--track-cell", {"type": int})])},
    "rgae": {
        "fit": (cmd_rgae_fit, [("--frames", {"required": True}),
                               ("--center", {"action": "store_true"}),
                               ("--reorthonormalize", {"action": "store_true"})]),
        "encode": (cmd_rgae_encode, [("--model", {"required": True}), ("--frames", {"required": True})]),
        "decode": (cmd_rgae_decode, [("--model", {"required": True}), ("--latents", {"required": True})]),
        "eval": (cmd_rgae_eval, [("--model", {"required": True}), ("--frames", {"required": True})]),
        "viz": (cmd_rgae_viz, [("--model", {"required": True})]),
    },
    "featviz": {"report": (cmd_featviz_report, [("--model-a", {"required": True}),
                                                ("--model-b", {"required": True}),
                                                ("--frames", {"required": True})])},
    "latent": {"grid": (cmd_latent_grid, [("--frames", {"required": True}), ("--vae", {}), ("--rgae", {})])},
    "cells": {
        "trace": (cmd_cells_trace, [("--lstm", {"required": True}), ("--actions", {"required": True}),
                                    ("--vae", {}), ("--frames", {})]),
        "kappa": (cmd_cells_kappa, [("--trace", {"required": True})]),
        "mu": (cmd_cells_mu, [("--trace", {"required": True})]),
    },
    "lrp": {
        "step": (cmd_lrp_step, [("--lstm", {"required": True}), ("--vae", {"required": True}),
                                ("--frames", {"required": True}), ("--actions", {"required": True})]),
        "probe": (cmd_lrp_probe, [("--lstm", {"required": True}), ("--vae", {"required": True}),
                                  ("--frames", {"required": True}), ("--actions", {"required": True})]),
    },
    "saliency": {"eval": (cmd_saliency_eval, [("--heatmaps", {"required": True}),
                                              ("--attention", {"required": True}),
                                              ("--fixations", {"required": True})])},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmx", description="Interpretability tools for a VAE + LSTM world model.")
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", metavar="<group>", required=True)
    for group, actions in COMMANDS.items():
        gp = groups.add_parser(group, help=f"{group} commands")
        sub = gp.add_subparsers(dest="action", metavar="<action>", required=True)
        for action, (fn, extra) in actions.items():
            ap = sub.add_parser(action, help=(fn.__doc__ or "").strip().split("\n")[0] or None)
            _add_common(ap)
            for flag, kw in extra:
                ap.add_argument(flag, **kw)
            ap.set_defaults(func=fn)
    demo = groups.add_parser("demo", help="run every stage on small generated fixtures")
    _add_common(demo)
    demo.set_defaults(func=cmd_demo, action="")
    return parser


_FLAG_FIELDS = {
    "seed": "seed", "frames_count": "frames", "views": "views", "k": "k", "cutoff": "cutoff",
    "latent_dim": "latent_dim", "cells": "cells", "region_size": "region_size",
    "increments": "increments", "r1": "r1", "r2": "r2", "component": "component", "mu_mode": "mu_mode",
    "top_n": "top_n", "top_k": "top_k", "eps": "eps", "delta": "delta", "quantile": "quantile",
    "steps": "steps", "frame_index": "frame_index", "pulse_cell": "pulse_cell", "track_cell": "track_cell",
}


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_json(args.config)
    elif args.group == "demo":
        cfg = RunConfig(**DEMO_DEFAULTS)
    else:
        cfg = RunConfig()
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.no_cutoff:
        cfg.cutoff = None
    if args.no_images:
        cfg.emit_images = False
    return cfg


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = f"{args.group} {args.action}".strip()
    try:
        cfg = resolve_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        with FileLock(str(out / LOCK_NAME), timeout=0):
            run = Run(out, command, cfg, argv)
            args.func(run, args)
            run.finish()
    except Timeout:
        print(f"wmx: {args.out} is in use by another run", file=sys.stderr)
        return EXIT_RUNTIME
    except (WmxError, ValueError, KeyError, OSError, TypeError) as exc:
        print(f"wmx {command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
