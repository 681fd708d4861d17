"""Command line entry points: scenegen, fit, render, eval, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import files
from .metrics import MetricReport
from .optimizer import ABLATIONS, FitConfig, FitDiverged, Sample, evaluate, fit
from .renderer import ImageBuffer, render
from .synthetic import GENERATORS, SyntheticSpec, generate

log = logging.getLogger("taylorgs")

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3

ABLATION_ROWS = (
    ("w/o Time-opacity", "time_opacity"),
    ("w/o Time-motion", "time_motion"),
    ("w/o Time-rotation", "time_rotation"),
    ("w/o Time-scale", "time_scale"),
    ("w/o Peano remainder", "peano_remainder"),
    ("Ours Full", None),
)


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_runtime(args) -> None:
    import torch

    threads = 1 if args.deterministic else max(1, args.threads)
    torch.set_num_threads(threads)
    if args.deterministic:
        torch.use_deterministic_algorithms(True)


# ---------------------------------------------------------------- scenegen


def _spec_from_args(args) -> SyntheticSpec:
    base = {}
    if getattr(args, "spec", None):
        base = json.loads(Path(args.spec).read_text())
    overrides = {
        "generator": args.generator,
        "n_gaussians": args.gaussians,
        "n_frames": args.frames,
        "n_cameras": args.cameras,
        "ring_radius": args.ring_radius,
        "width": args.width,
        "height": args.height,
        "motion": args.motion,
        "pos_order": args.pos_order,
        "scale_order": args.scale_order,
        "rot_order": args.rot_order,
        "n_controls": args.controls,
        "k_neighbors": args.neighbors,
        "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return SyntheticSpec(**base)


def write_dataset(data, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = out_dir / "frames"
    frames.mkdir(exist_ok=True)
    files.save_scene(data.init_scene, out_dir / "scene.json")
    files.save_cameras(data.cameras, out_dir / "cameras.json")
    (out_dir / "spec.json").write_text(json.dumps(data.spec.to_dict(), indent=1, sort_keys=True))
    (out_dir / "truth.json").write_text(json.dumps(data.truth_record()))
    index = []
    for fi, t in enumerate(data.times):
        for ci in range(len(data.cameras)):
            name = files.frame_name(fi, ci)
            data.frame(fi, ci).save(frames / name)
            index.append({"file": name, "frame": fi, "camera": ci, "t": float(t)})
    (out_dir / "dataset.json").write_text(json.dumps({"times": [float(t) for t in data.times], "frames": index}, indent=1))


def cmd_scenegen(args) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_dataset(generate(spec), out)
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from exc
    print(f"wrote {spec.generator} dataset to {out}")
    return 0


# ---------------------------------------------------------------- fit


def load_samples(data_dir: Path, holdout=()) -> tuple[list, list]:
    """Training and held-out samples listed in ``dataset.json``."""
    cams = files.load_cameras(data_dir / "cameras.json")
    index = json.loads((data_dir / "dataset.json").read_text())
    missing = [f["file"] for f in index["frames"] if not (data_dir / "frames" / f["file"]).exists()]
    if missing:
        raise DataError("missing frames: " + ", ".join(missing))
    train, test = [], []
    for f in index["frames"]:
        if not 0 <= f["camera"] < len(cams):
            raise DataError(f"frame {f['file']} refers to undeclared camera {f['camera']}")
        img = ImageBuffer.load(data_dir / "frames" / f["file"])
        cam = cams[f["camera"]]
        if (img.width, img.height) != (cam.width, cam.height):
            raise DataError(f"frame {f['file']} does not match its camera resolution")
        s = Sample(cam, float(f["t"]), img, f["file"])
        (test if f["camera"] in holdout else train).append(s)
    return train, test


def _config_from_args(args) -> FitConfig:
    config = FitConfig.from_json(args.config) if getattr(args, "config", None) else FitConfig()
    if getattr(args, "iterations", None) is not None:
        config.iterations = args.iterations
    if args.seed is not None:
        config.seed = args.seed
    for name in ABLATIONS:
        if getattr(args, f"no_{name}", False):
            setattr(config, name, False)
    return config


def cmd_fit(args) -> int:
    data_dir = Path(args.data)
    scene_path = Path(args.scene) if args.scene else data_dir / "scene.json"
    scene = files.load_scene(scene_path)
    config = _config_from_args(args)
    train, test = load_samples(data_dir, set(args.holdout_cameras))
    if not train:
        raise DataError("no training frames")
    result = fit(scene, config, train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files.save_scene(result.scene, out / "fitted_scene.json")
    (out / "history.csv").write_text(result.history_csv())
    p, s = evaluate(result.scene, train)
    summary = {"train_psnr": p, "train_ssim": s}
    if test:
        summary["test_psnr"], summary["test_ssim"] = evaluate(result.scene, test)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(" ".join(f"{k}={v:.4f}" for k, v in sorted(summary.items())))
    return 0


# ---------------------------------------------------------------- render


def cmd_render(args) -> int:
    scene = files.load_scene(args.scene)
    cams = files.load_cameras(args.camera)
    if not 0 <= args.camera_index < len(cams):
        raise DataError(f"camera index {args.camera_index} out of range")
    cam = cams[args.camera_index]
    threads = 1 if args.deterministic else args.threads
    if args.t is not None:
        times = [args.t]
    else:
        t0, t1, n = args.t_range
        n = int(n)
        if n < 1:
            raise DataError("t-range needs at least one step")
        times = list(np.linspace(float(t0), float(t1), n)) if n > 1 else [float(t0)]
    for t in times:
        if not 0.0 <= t <= 1.0:
            raise DataError(f"time {t} outside [0, 1]")
    out = Path(args.out)
    if args.t is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        render(scene, cam, times[0], threads).save(out)
    else:
        out.mkdir(parents=True, exist_ok=True)
        ext = args.format
        for i, t in enumerate(times):
            render(scene, cam, float(t), threads).save(out / f"frame_{i:04d}.{ext}")
    return 0


# ---------------------------------------------------------------- eval


def evaluate_dirs(renders: Path, truth: Path) -> MetricReport:
    exts = {".ppm", ".png"}
    a = {p.name: p for p in sorted(renders.iterdir()) if p.suffix.lower() in exts}
    b = {p.name: p for p in sorted(truth.iterdir()) if p.suffix.lower() in exts}
    unpaired = sorted(set(a) ^ set(b))
    if unpaired:
        raise DataError("unpaired frames: " + ", ".join(unpaired))
    if not a:
        raise DataError("no frames to evaluate")
    report = MetricReport()
    for name in sorted(a):
        report.add(name, ImageBuffer.load(a[name]), ImageBuffer.load(b[name]))
    return report


def cmd_eval(args) -> int:
    report = evaluate_dirs(Path(args.renders), Path(args.truth))
    if args.out:
        Path(args.out).write_text(report.to_csv())
    print(report.table())
    return 0


# ---------------------------------------------------------------- ablate


def run_ablation(data, config: FitConfig, holdout=None, progress=None) -> list:
    """Full model plus the five single-component ablations on identical data and seed.

    Rows come back in table order: the five ablations, then the full model.
    Metrics are measured on the held-out cameras when given, else on the
    training views.
    """
    cams = list(range(len(data.cameras)))
    holdout = [] if holdout is None else list(holdout)
    train = data.samples(cameras=[c for c in cams if c not in holdout])
    test = data.samples(cameras=holdout) if holdout else train
    rows = []
    for label, flag in ABLATION_ROWS:
        cfg = FitConfig(**{k: getattr(config, k) for k in config.__dataclass_fields__ if k != "samples"})
        if flag is not None:
            setattr(cfg, flag, False)
        result = fit(data.init_scene, cfg, train)
        p, s = evaluate(result.scene, test)
        rows.append((label, p, s))
        if progress:
            progress(label, p, s)
    return rows


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "psnr", "ssim"])
    for label, p, s in rows:
        w.writerow([label, f"{p:.4f}", f"{s:.4f}"])
    return buf.getvalue()


def cmd_ablate(args) -> int:
    spec = _spec_from_args(args)
    config = _config_from_args(args)
    data = generate(spec)
    holdout = args.holdout_cameras
    if holdout is None:
        holdout = [len(data.cameras) - 1] if len(data.cameras) > 1 else []
    rows = run_ablation(data, config, holdout,
                        progress=lambda label, p, s: log.info("%s: PSNR %.3f SSIM %.4f", label, p, s))
    text = ablation_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


# ---------------------------------------------------------------- parser


def _add_spec_args(p) -> None:
    p.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    p.add_argument("--generator", choices=GENERATORS)
    p.add_argument("--gaussians", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--cameras", type=int)
    p.add_argument("--ring-radius", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--motion", type=float)
    p.add_argument("--pos-order", type=int)
    p.add_argument("--scale-order", type=int)
    p.add_argument("--rot-order", type=int)
    p.add_argument("--controls", type=int, help="control point count (default max(8, 2%% of Gaussians))")
    p.add_argument("--neighbors", type=int, help="neighbors per Gaussian")


def _add_fit_args(p) -> None:
    p.add_argument("--config", help="FitConfig JSON file")
    p.add_argument("--iterations", type=int)
    for name in ABLATIONS:
        p.add_argument(f"--no-{name.replace('_', '-')}", dest=f"no_{name}", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress):
        # subcommands repeat the global flags; SUPPRESS keeps them from
        # overwriting values given before the subcommand name
        def default(value):
            return argparse.SUPPRESS if suppress else value

        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--seed", type=int, default=default(None))
        p.add_argument("--threads", type=int, default=default(1))
        p.add_argument("--deterministic", action="store_true", default=default(False))
        p.add_argument("-v", "--verbose", action="store_true", default=default(False))
        return p

    common = global_flags(True)
    parser = _Parser(prog="taylorgs", description=__doc__.splitlines()[0], parents=[global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scenegen", parents=[common], help="generate a synthetic dataset")
    _add_spec_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scenegen)

    p = sub.add_parser("fit", parents=[common], help="fit a scene to a dataset")
    p.add_argument("--data", required=True, help="dataset directory written by scenegen")
    p.add_argument("--scene", help="initial scene (default: DATA/scene.json)")
    p.add_argument("--out", required=True)
    p.add_argument("--holdout-cameras", type=int, nargs="*", default=[])
    _add_fit_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", parents=[common], help="render a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--camera", required=True, help="camera JSON (single camera or list)")
    p.add_argument("--camera-index", type=int, default=0)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--t", type=float)
    g.add_argument("--t-range", type=float, nargs=3, metavar=("T0", "T1", "N"))
    p.add_argument("--format", choices=("ppm", "png"), default="ppm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of paired frames")
    p.add_argument("--renders", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="full model vs. single-component ablations")
    _add_spec_args(p)
    _add_fit_args(p)
    p.add_argument("--holdout-cameras", type=int, nargs="*", default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _setup_runtime(args)
    try:
        return args.func(args)
    except FitDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
