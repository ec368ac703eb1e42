"""``evmotion`` command line: simulate, deblur, recover, evaluate.

Exit codes: 0 ok, 1 config/validation, 2 I/O or format, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .dataset import load_dataset
from .errors import (Diverged, LengthMismatch, NoForeground, SingularInnovation,
                     ValidationError)
from .events import cumulative_event_maps, edi_deblur, luminance, synthesize_blur
from .gaussians import load_cloud
from .geometry import load_trajectory, save_trajectory
from .images import load_png, save_png
from .metrics import psnr, ssim, trajectory_metrics
from .recovery import recover, register_to_scene
from .scenesim import make_dataset

logger = logging.getLogger("evmotion")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3
OVERLAY_ALPHA = 0.5
LOSS_COLUMNS = ("exposure", "blur", "acc", "event", "kf", "total", "lr")


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, default: Path) -> Path:
    out = Path(args.out) if args.out else default
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    if not args.out:
        raise CommandError(EXIT_INVALID, "simulate needs --out")
    out = _out_dir(args, Path(args.out))
    cloud, body = cfg.scene()
    summary = make_dataset(cloud, body, cfg.capture, cfg.exposures, out, cfg.seed)
    print(f"exposures={summary['exposures']} events={summary['events']} "
          f"path_length={summary['path_length']:.6f}")
    return EXIT_OK


def _sharps(root: Path, e: int, n: int):
    paths = [root / f"sharp_{e:04d}_{i:02d}.png" for i in range(n)]
    return [load_png(p) for p in paths] if all(p.exists() for p in paths) else None


def cmd_deblur(args) -> int:
    ds = load_dataset(args.dataset)
    out = _out_dir(args, Path(args.dataset) / "deblurred")
    scores = []
    for b in ds.bundles:
        latents = edi_deblur(b.blur, cumulative_event_maps(b.bins), ds.epsilon)
        for i, img in enumerate(latents):
            save_png(out / f"edi_{b.index:04d}_{i:02d}.png", img)
        gt = _sharps(ds.root, b.index, b.n_sub)
        if gt is not None:
            # events only see luminance, so that is the headline score
            lum = float(np.mean([psnr(luminance(a), luminance(g)) for a, g in zip(latents, gt)]))
            rgb = float(np.mean([psnr(a, g) for a, g in zip(latents, gt)]))
            scores.append((lum, rgb))
            print(f"exposure {b.index}: PSNR {lum:.2f} dB (RGB {rgb:.2f} dB)")
    if scores:
        lum, rgb = np.mean(scores, axis=0)
        print(f"mean PSNR {lum:.2f} dB (RGB {rgb:.2f} dB)")
    return EXIT_OK


def _write_losses(path: Path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for row in losses:
            w.writerow([row["exposure"]] + [repr(float(row[k])) for k in LOSS_COLUMNS[1:]])


def cmd_recover(args) -> int:
    cfg = _run_config(args)
    ds = load_dataset(args.dataset)
    cloud = load_cloud(args.cloud or Path(args.dataset) / "cloud.json")
    out = _out_dir(args, Path(args.dataset) / "recovered")
    rcfg = cfg.recovery()
    b0 = ds.bundles[0]
    first = edi_deblur(b0.blur, cumulative_event_maps(b0.bins), ds.epsilon)[0]
    reg = register_to_scene(cloud, first, ds.camera, rcfg)
    est = recover(cloud, ds.bundles, ds.camera, ds.epsilon, rcfg, registration=reg)

    save_trajectory(out / "trajectory.json", est.timestamps, est.poses,
                    {"registration": {"q": list(reg.rotation.as_array()),
                                      "t": list(reg.translation), "s": reg.scale},
                     "kalman": [s.to_dict() for s in est.kalman_states]})
    _write_losses(out / "losses.csv", est.losses)

    n = b0.n_sub
    renders = [est.render(i, ds.camera) for i in range(len(est.poses))]
    for b in ds.bundles:
        frames = renders[b.index * (n - 1): b.index * (n - 1) + n]
        for i, img in enumerate(frames):
            save_png(out / f"render_{b.index:04d}_{i:02d}.png", img)
        blur = b.blur if b.blur.ndim == 3 else np.repeat(b.blur[:, :, None], 3, axis=2)
        overlay = OVERLAY_ALPHA * synthesize_blur(frames) + (1 - OVERLAY_ALPHA) * blur
        save_png(out / f"overlay_{b.index:04d}.png", overlay)

    gt = ds.gt_trajectory()
    if gt is not None:
        metrics = _track_metrics(Path(args.dataset), out, ds.exposures, n)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=1))
        print(f"IoU={metrics['IoU']:.4f} ATE={metrics['ATE']:.6f} RMSE={metrics['RMSE']:.6f}")
    print(f"poses={len(est.poses)} final_total={est.losses[-1]['total']:.6g}")
    return EXIT_OK


def _track_metrics(gt_dir: Path, result_dir: Path, exposures: int, n: int) -> dict:
    _, gt = load_trajectory(gt_dir / "trajectory_gt.json")
    _, est = load_trajectory(result_dir / "trajectory.json")
    gt_frames, est_frames = [], []
    for e in range(exposures):
        for i in range(n):
            g = gt_dir / f"sharp_{e:04d}_{i:02d}.png"
            r = result_dir / f"render_{e:04d}_{i:02d}.png"
            if g.exists() and r.exists():
                gt_frames.append(load_png(g))
                est_frames.append(load_png(r))
    return trajectory_metrics(gt, est, gt_frames, est_frames)


def cmd_evaluate(args) -> int:
    gt_dir, res_dir = Path(args.gt), Path(args.result)
    meta = json.loads((gt_dir / "meta.json").read_text())
    exposures, n = int(meta["exposures"]), int(meta["capture"]["n_sub"])
    out = _out_dir(args, res_dir)
    metrics: dict = {}
    for prefix in ("edi", "render"):
        rows = []
        for e in range(exposures):
            for i in range(n):
                r = res_dir / f"{prefix}_{e:04d}_{i:02d}.png"
                g = gt_dir / f"sharp_{e:04d}_{i:02d}.png"
                if r.exists():
                    a, b = load_png(g), load_png(r)
                    rows.append({"exposure": e, "frame": i, "PSNR": psnr(b, a),
                                 "SSIM": ssim(b, a)})
        if rows:
            metrics[prefix] = {"frames": rows,
                               "mean_PSNR": float(np.mean([r["PSNR"] for r in rows])),
                               "mean_SSIM": float(np.mean([r["SSIM"] for r in rows]))}
    if (res_dir / "trajectory.json").exists():
        metrics["track"] = _track_metrics(gt_dir, res_dir, exposures, n)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1))
    for key in ("edi", "render"):
        if key in metrics:
            print(f"{key}: mean PSNR {metrics[key]['mean_PSNR']:.2f} dB, "
                  f"mean SSIM {metrics[key]['mean_SSIM']:.4f}")
    if "track" in metrics:
        t = metrics["track"]
        print(f"track: IoU={t['IoU']:.4f} ATE={t['ATE']:.6f} RMSE={t['RMSE']:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="evmotion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("deblur", parents=[common], help="EDI-deblur every exposure")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("recover", parents=[common], help="register and recover the trajectory")
    p.add_argument("dataset")
    p.add_argument("cloud", nargs="?", help="cloud JSON (default: DATASET/cloud.json)")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("evaluate", parents=[common], help="score results against ground truth")
    p.add_argument("gt")
    p.add_argument("result")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CommandError as exc:
        code, msg = exc.code, str(exc)
    except LengthMismatch as exc:
        code, msg = EXIT_IO, f"length mismatch: {exc}"
    except json.JSONDecodeError as exc:
        code, msg = EXIT_INVALID, f"invalid JSON ({exc})"
    except ValidationError as exc:
        code, msg = EXIT_INVALID, str(exc)
    except (Diverged, NoForeground, SingularInnovation) as exc:
        code, msg = EXIT_DIVERGED, f"diverged: {exc}"
    except (OSError, KeyError) as exc:
        code, msg = EXIT_IO, f"I/O error: {exc}"
    print(f"evmotion {args.command}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
