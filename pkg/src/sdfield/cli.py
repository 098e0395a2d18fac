"""Command-line interface.

Subcommands: sdfgen, sample, fit, pose-fit, reconstruct, eval, render-depth.
Exit codes: 0 success, 2 I/O or parse failure, 3 validation failure,
4 numeric failure. Worker counts come from --threads, then the
SDFIELD_THREADS environment variable, then the CPU count.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .camera import Intrinsics, PoseFitSettings, fit_pose, load_pose, save_pose
from .config import load_run_config
from .encoder import encode_image, local_features
from .errors import (
    InvalidConfig,
    NumericError,
    ParseError,
    SdfieldError,
    TooLarge,
    ValidationError,
)
from .extract import IsoSurfaceConfig, evaluate_field, marching_cubes
from .grid import (
    build_sdf_grid,
    load_sdf_grid,
    sample_training_points,
    samples_to_arrays,
    save_point_samples,
    save_sdf_grid,
)
from .image import load_pgm, normalize_depth, save_pgm
from .mesh import load_mesh, normalize_mesh, save_obj
from .metrics import MetricReport, evaluate_meshes
from .regressor import (
    TrainingSet,
    TrainingView,
    batch_sdf_loss,
    build_sdf_model,
    forward_batch,
    load_model,
    project_with_clamp,
    save_loss_log,
    save_model,
    train,
)
from .render import render_depth_image

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4


def _intrinsics_flags(parser, default_size=128):
    parser.add_argument("--width", type=int, default=default_size)
    parser.add_argument("--height", type=int, default=default_size)
    parser.add_argument("--focal", type=float, default=None, help="default: image width")
    parser.add_argument("--cx", type=float, default=None, help="default: image center")
    parser.add_argument("--cy", type=float, default=None, help="default: image center")


def _intrinsics_from(args) -> Intrinsics:
    base = Intrinsics.default_for(args.width, args.height)
    return Intrinsics(
        focal=base.focal if args.focal is None else args.focal,
        cx=base.cx if args.cx is None else args.cx,
        cy=base.cy if args.cy is None else args.cy,
        width=args.width,
        height=args.height,
    )


def _parse_bbox(text):
    vals = [float(x) for x in text.replace(",", " ").split()]
    if len(vals) != 6:
        raise InvalidConfig("--bbox needs 6 numbers: min x y z, max x y z")
    return (tuple(vals[:3]), tuple(vals[3:]))


def cmd_sdfgen(args) -> int:
    mesh = load_mesh(args.mesh)
    if args.normalize:
        mesh, _ = normalize_mesh(mesh, args.margin)
    grid = build_sdf_grid(
        mesh,
        args.resolution,
        bbox=_parse_bbox(args.bbox),
        parallel=args.threads != 1,
        threads=args.threads,
    )
    save_sdf_grid(args.output, grid)
    values = grid.values
    pct_neg = 100.0 * (values < 0).mean()
    print(f"resolution={grid.resolution[0]}x{grid.resolution[1]}x{grid.resolution[2]}")
    print(f"min={values.min():.6g} max={values.max():.6g} negative={pct_neg:.2f}%")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_sample(args) -> int:
    grid = load_sdf_grid(args.grid)
    samples = sample_training_points(grid, args.count, args.sigma, args.seed)
    save_point_samples(args.output, samples)
    print(f"wrote {len(samples)} samples to {args.output}")
    return EXIT_OK


def _holdout_error(model, dataset, points, gt) -> float:
    qs, _ = project_with_clamp(dataset.views[0].pose, dataset.intrinsics, points)
    stack = encode_image(dataset.views[0].image, model.encoder)
    preds = forward_batch(model, stack.global_vec, local_features(stack, qs), points)[0]
    return float(np.abs(preds - gt).mean())


def cmd_fit(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.mesh is None or cfg.model is None:
        raise InvalidConfig("fit config needs `mesh` and `model` paths")

    mesh = load_mesh(cfg.mesh)
    mesh, _ = normalize_mesh(mesh, cfg.margin)
    grid = build_sdf_grid(mesh, cfg.grid_resolution, bbox=cfg.grid_bbox)

    total = cfg.sample_count + cfg.holdout_count
    if total > grid.n_points:
        raise InvalidConfig(
            f"sample.count + holdout.count = {total} exceeds lattice size {grid.n_points}"
        )
    samples = sample_training_points(grid, total, cfg.sample_sigma, cfg.sample_seed)
    train_samples = samples[: cfg.sample_count]
    holdout = samples[cfg.sample_count :]

    if cfg.pose is not None:
        pose = load_pose(cfg.pose)
    else:
        raise InvalidConfig("fit config needs a `pose` path (ground-truth camera)")

    if cfg.image is not None:
        img = load_pgm(cfg.image)
    else:
        img = normalize_depth(
            render_depth_image(grid, pose, cfg.intrinsics, cfg.intrinsics.width, cfg.intrinsics.height)
        )

    model = build_sdf_model(
        variant=cfg.variant,
        seed=cfg.train.seed,
        image_size=(cfg.intrinsics.width, cfg.intrinsics.height),
    )
    dataset = TrainingSet.from_samples([TrainingView(img, pose)], train_samples, cfg.intrinsics)
    model, loss_log = train(model, dataset, cfg.train, cfg.loss)

    save_model(cfg.model, model)
    if cfg.loss_log is not None:
        save_loss_log(cfg.loss_log, loss_log)
    if holdout and model.variant != "binary":
        pts, gt = samples_to_arrays(holdout)
        err = _holdout_error(model, dataset, pts, gt)
        print(f"holdout_mean_abs_error={err!r}")
    final = loss_log[-1] if loss_log else float("nan")
    print(f"final_loss={final!r}")
    return EXIT_OK


def _load_correspondences(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError("expected `xw yw zw xc yc zc`", path, lineno)
            rows.append([float(v) for v in parts])
    arr = np.array(rows)
    return arr[:, :3], arr[:, 3:]


def cmd_pose_fit(args) -> int:
    pc_w, pc_g = _load_correspondences(args.correspondences)
    opts = PoseFitSettings(
        learning_rate=args.lr,
        steps=args.steps,
        restarts=args.restarts,
        tolerance=args.tolerance,
    )
    pose, history = fit_pose(pc_w, pc_g, seed=args.seed, opts=opts)
    save_pose(args.output, pose)
    print(f"final_loss={history[-1]!r}")
    print(f"evaluations={len(history)}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    if args.pose is None and not args.fit_pose:
        raise InvalidConfig("need --pose FILE or --fit-pose with --corr FILE")
    if args.fit_pose and args.corr is None:
        raise InvalidConfig("--fit-pose requires --corr with correspondences")

    model = load_model(args.model)
    img = load_pgm(args.image)
    intr_args = argparse.Namespace(
        width=img.width, height=img.height, focal=args.focal, cx=args.cx, cy=args.cy
    )
    intr = _intrinsics_from(intr_args)

    if args.fit_pose:
        pc_w, pc_g = _load_correspondences(args.corr)
        pose, _ = fit_pose(pc_w, pc_g, seed=args.seed)
    else:
        pose = load_pose(args.pose)

    stack = encode_image(img, model.encoder)
    cfg = IsoSurfaceConfig(resolution=args.resolution, iso_value=args.iso)
    grid = evaluate_field(model, stack, pose, intr, cfg, threads=args.threads)
    if args.dump_grid:
        save_sdf_grid(args.dump_grid, grid)
    mesh = marching_cubes(grid, cfg.iso_value)
    save_obj(args.output, mesh)
    print(f"vertices={mesh.n_vertices} triangles={mesh.n_faces}")
    if mesh.n_vertices == 0:
        print("warning: empty surface (no iso crossing)", file=sys.stderr)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    mesh_a = load_mesh(args.mesh_a)
    mesh_b = load_mesh(args.mesh_b)
    report = evaluate_meshes(
        mesh_a,
        mesh_b,
        n_points=args.n_points,
        seed=args.seed,
        iou_resolution=args.iou_res,
        emd_cap=args.emd_cap,
        emd_approximate=args.emd_approx,
    )
    for line in report.lines():
        print(line)
    if args.table:
        print(report.table())
    return EXIT_OK


def cmd_render_depth(args) -> int:
    grid = load_sdf_grid(args.grid)
    pose = load_pose(args.pose)
    intr = _intrinsics_from(args)
    img = render_depth_image(grid, pose, intr, args.width, args.height)
    positive = img.pixels[img.pixels > 0]
    save_pgm(args.output, normalize_depth(img))
    if positive.size:
        print(f"depth_range=[{positive.min():.6g}, {positive.max():.6g}]")
    else:
        print("depth_range=empty")
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdfield",
        description="Single-view implicit-surface reconstruction toolkit.",
    )
    parser.add_argument("--version", action="version", version=f"sdfield {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sdfgen", help="signed-distance grid from a mesh")
    p.add_argument("mesh", help="OBJ or ascii PLY input")
    p.add_argument("-r", "--resolution", type=int, default=64)
    p.add_argument("--bbox", default="-0.5 -0.5 -0.5 0.5 0.5 0.5")
    p.add_argument("--normalize", action="store_true", help="normalize into the unit cube first")
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_sdfgen)

    p = sub.add_parser("sample", help="draw near-surface training points from a grid")
    p.add_argument("grid", help="SDFG file")
    p.add_argument("-n", "--count", type=int, default=2048)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("fit", help="train an SDF model from a run config")
    p.add_argument("config", help="key=value run configuration")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pose-fit", help="fit a camera pose to correspondences")
    p.add_argument("correspondences", help="text file: xw yw zw xc yc zc per line")
    p.add_argument("-o", "--output", required=True, help="pose file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-12)
    p.set_defaults(func=cmd_pose_fit)

    p = sub.add_parser("reconstruct", help="extract a mesh from a trained model")
    p.add_argument("model", help="DISN model file")
    p.add_argument("--image", required=True, help="input depth image (PGM)")
    p.add_argument("--pose", default=None, help="pose file (ground-truth mode)")
    p.add_argument("--fit-pose", action="store_true", help="estimate the pose instead")
    p.add_argument("--corr", default=None, help="correspondence file for --fit-pose")
    p.add_argument("-r", "--resolution", type=int, default=64)
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--focal", type=float, default=None)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    p.add_argument("--dump-grid", default=None, help="also write the evaluated SDFG")
    p.add_argument("-o", "--output", required=True, help="OBJ to write")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="CD / EMD / IoU between two meshes")
    p.add_argument("mesh_a")
    p.add_argument("mesh_b")
    p.add_argument("-n", "--n-points", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iou-res", type=int, default=32)
    p.add_argument("--emd-cap", type=int, default=512)
    p.add_argument("--emd-approx", action="store_true")
    p.add_argument("--table", action="store_true", help="also print the scaled table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render-depth", help="sphere-trace a depth image from a grid")
    p.add_argument("grid", help="SDFG file")
    p.add_argument("--pose", required=True)
    _intrinsics_flags(p)
    p.add_argument("-o", "--output", required=True, help="PGM to write")
    p.set_defaults(func=cmd_render_depth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, InvalidConfig) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SdfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
