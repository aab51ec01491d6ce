"""Command-line entry point: ``rgbdsurf <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (non-finite values, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_threads(threads: int | None, deterministic: bool) -> None:
    import torch

    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    elif threads:
        torch.set_num_threads(threads)


# commands -----------------------------------------------------------------------

def cmd_make_synthetic(a) -> int:
    from . import dataio

    spec = dataio.SceneSpec.from_file(a.spec) if a.spec else dataio.box_room_spec()
    ds = dataio.generate_synthetic(spec, a.out, np.random.default_rng(a.seed))
    print(f"wrote {len(ds.frames)} frames to {a.out}")
    return EXIT_OK


def cmd_train(a) -> int:
    from . import dataio
    from .trainer import load_config, train

    _setup_threads(a.threads, a.deterministic)
    cfg = load_config(a.config, total_iters=a.iters, seed=a.seed,
                      no_semantic=True if a.no_semantic else None,
                      no_sg_mlp=True if a.no_sg_mlp else None)
    ds = dataio.load_dataset(a.data)
    history = a.history or str(Path(a.out).with_suffix(".csv"))
    res = train(ds, cfg, out=a.out, history_path=history)
    last = res.history[-1]
    print(f"trained {cfg.total_iters} iterations in {res.seconds:.1f} s; final loss {last['total']:.5g}")
    print(f"checkpoint {a.out}, loss history {history}")
    return EXIT_OK


def _load_ckpt(path):
    from .field import load_checkpoint
    from .trainer import TrainConfig

    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint {path} not found")
    field, meta = load_checkpoint(path)
    cfg = TrainConfig(**meta["train_config"]) if "train_config" in meta else TrainConfig()
    return field, meta, cfg


def _cameras(meta):
    from .geometry import CameraIntrinsics, Pose

    if "intrinsics" not in meta:
        raise UsageError("checkpoint carries no camera metadata")
    fx, fy, cx, cy, w, h, ds = meta["intrinsics"]
    intr = CameraIntrinsics(fx, fy, cx, cy, int(w), int(h), ds)
    return intr, [Pose.from_matrix(p) for p in meta["poses"]]


def cmd_render(a) -> int:
    from PIL import Image

    from .dataio import palette
    from .trainer import render_image

    _setup_threads(a.threads, a.deterministic)
    field, meta, cfg = _load_ckpt(a.ckpt)
    intr, poses = _cameras(meta)
    if not 0 <= a.frame < len(poses):
        raise UsageError(f"frame {a.frame} outside [0, {len(poses)})")
    if a.weight_mode:
        cfg = replace(cfg, weight_mode=a.weight_mode)
    col, sem, dep = render_image(field, intr, poses[a.frame], meta["bounds"], cfg)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    to8 = lambda x: np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)  # noqa: E731
    Image.fromarray(to8(col)).save(f"{out}_color.png")
    Image.fromarray(to8(sem)).save(f"{out}_semantic.png")
    # class ids by nearest palette entry
    pal = palette().astype(np.float64) / 255
    ids = np.argmin(((sem[..., None, :] - pal) ** 2).sum(-1), -1)
    Image.fromarray(palette()[ids]).save(f"{out}_labels.png")
    scale = max(float(dep.max()), 1e-6)
    Image.fromarray(to8(dep / scale)).save(f"{out}_depth.png")
    print(f"wrote {out}_color.png, {out}_depth.png, {out}_semantic.png, {out}_labels.png")
    return EXIT_OK


def cmd_extract_mesh(a) -> int:
    from . import dataio
    from .mesher import cull_to_frustums, extract_mesh

    _setup_threads(a.threads, a.deterministic)
    field, meta, _ = _load_ckpt(a.ckpt)
    mesh = extract_mesh(field, a.resolution)
    if mesh.empty:
        logging.warning("extracted mesh is empty")
    elif not a.no_cull:
        intr, poses = _cameras(meta)
        depths = None
        data = a.data or meta.get("data")
        if data and Path(data).is_dir():
            depths = [f.depth for f in dataio.load_dataset(data).frames]
        mesh = cull_to_frustums(mesh, intr, poses, depths, margin=a.cull_margin)
    dataio.write_mesh(mesh, a.out)
    print(f"wrote {a.out}: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")
    return EXIT_OK


def cmd_evaluate(a) -> int:
    from .dataio import read_mesh
    from .metrics import MetricsConfig, evaluate

    rep = evaluate(read_mesh(a.pred), read_mesh(a.gt), MetricsConfig(a.samples, a.tau, a.voxel, a.seed))
    print(rep.table())
    if a.out:
        Path(a.out).write_text(rep.to_json() + "\n")
    return EXIT_OK


def cmd_gradcheck(a) -> int:
    from .trainer import GradCheckConfig, gradient_check

    _setup_threads(a.threads, True)
    gc = GradCheckConfig()
    if a.config:
        import yaml

        gc = GradCheckConfig(**(yaml.safe_load(Path(a.config).read_text()) or {}))
    rep = gradient_check(gc)
    print(rep.table())
    print(f"{'PASS' if rep.passed else 'FAIL'} ({rep.seconds:.1f} s)")
    return EXIT_OK if rep.passed else EXIT_NUMERIC


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rgbdsurf", description="Neural SDF surface reconstruction from RGB-D with semantic supervision.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def threads(sp, det=True):
        sp.add_argument("--threads", type=int, default=None, metavar="N",
                        help="torch worker threads (default: hardware count)")
        if det:
            sp.add_argument("--deterministic", action="store_true",
                            help="single-threaded, deterministic reductions")

    s = sub.add_parser("make-synthetic", help="render a synthetic RGB-D scene")
    s.add_argument("--spec", help="scene spec YAML (default: built-in box room)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--seed", type=int, default=0, help="noise seed")
    s.set_defaults(fn=cmd_make_synthetic)

    s = sub.add_parser("train", help="fit a field to a dataset")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--config", help="training config YAML")
    s.add_argument("--out", required=True, help="output checkpoint path")
    s.add_argument("--history", help="loss-history CSV (default: checkpoint path with .csv)")
    s.add_argument("--iters", type=int, default=None, help="override total_iters")
    s.add_argument("--seed", type=int, default=None, help="override seed")
    s.add_argument("--no-semantic", action="store_true", help="drop the semantic rendering terms")
    s.add_argument("--no-sg-mlp", action="store_true",
                   help="replace guided sampling by stratified + weight resampling")
    threads(s)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("render", help="render colour, depth and semantics for one training camera")
    s.add_argument("--ckpt", required=True, help="checkpoint path")
    s.add_argument("--frame", type=int, required=True, help="camera index")
    s.add_argument("--out", required=True, help="output prefix for the PNG files")
    s.add_argument("--weight-mode", choices=("auto", "neus_standard", "fine_reweighted"),
                   help="override the checkpoint's ray-weight mode")
    threads(s)
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("extract-mesh", help="marching cubes on the trained SDF")
    s.add_argument("--ckpt", required=True, help="checkpoint path")
    s.add_argument("--out", required=True, help="output PLY path")
    s.add_argument("--resolution", type=int, default=None,
                   help="lattice nodes per axis (default: finest voxel pitch)")
    s.add_argument("--no-cull", action="store_true", help="keep geometry outside the camera frustums")
    s.add_argument("--data", help="dataset directory for depth-aware culling (default: from checkpoint)")
    s.add_argument("--cull-margin", type=float, default=0.05, help="allowed depth behind observations, m")
    threads(s)
    s.set_defaults(fn=cmd_extract_mesh)

    s = sub.add_parser("evaluate", help="compare a predicted mesh with ground truth")
    s.add_argument("--pred", required=True, help="predicted mesh PLY")
    s.add_argument("--gt", required=True, help="ground-truth mesh PLY")
    s.add_argument("--out", help="report JSON path")
    s.add_argument("--tau", type=float, default=0.05, help="F-score distance threshold, m")
    s.add_argument("--voxel", type=float, default=0.05, help="IoU voxel size, m")
    s.add_argument("--samples", type=int, default=200_000, help="surface samples per mesh")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    s.add_argument("--config", help="YAML overriding the tiny-field settings")
    threads(s, det=False)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    from .dataio import DataError
    from .field import CheckpointError, FieldError
    from .metrics import MetricsError
    from .trainer import ConfigError

    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MetricsError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FieldError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
