"""Run configuration: key=value files with dotted names and # comments.

Paths inside a config are resolved relative to the config file's directory,
so shipped recipe files stay relocatable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .camera import Intrinsics
from .errors import InvalidConfig, ParseError
from .regressor import LossParams, TrainConfig


def parse_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", path, lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ParseError("empty key", path, lineno)
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Everything a fit/reconstruct run needs, with validated paths."""

    mesh: str | None = None
    image: str | None = None
    pose: str | None = None
    model: str | None = None
    output: str | None = None
    loss_log: str | None = None
    grid_resolution: int = 64
    grid_bbox: tuple = ((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    sample_count: int = 2048
    sample_sigma: float = 0.1
    sample_seed: int = 0
    pose_mode: str = "ground_truth"  # or "estimated"
    variant: str = "two_stream"
    margin: float = 0.05
    holdout_count: int = 2048
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics.default_for(128, 128))
    loss: LossParams = field(default_factory=LossParams)
    train: TrainConfig = field(default_factory=TrainConfig)


def _get(kv, key, cast, default):
    if key not in kv:
        return default
    try:
        return cast(kv[key])
    except ValueError as exc:
        raise InvalidConfig(f"bad value for {key}: {exc}")


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_run_config(path) -> RunConfig:
    kv = parse_kv_file(path)
    base = os.path.dirname(os.path.abspath(path))

    def resolve(key):
        if key not in kv:
            return None
        return kv[key] if os.path.isabs(kv[key]) else os.path.join(base, kv[key])

    bbox_text = kv.get("grid.bbox")
    if bbox_text is not None:
        vals = [float(x) for x in bbox_text.replace(",", " ").split()]
        if len(vals) != 6:
            raise InvalidConfig("grid.bbox needs 6 numbers (min xyz, max xyz)")
        bbox = (tuple(vals[:3]), tuple(vals[3:]))
    else:
        bbox = RunConfig.grid_bbox

    width = _get(kv, "intrinsics.width", int, 128)
    height = _get(kv, "intrinsics.height", int, 128)
    default_intr = Intrinsics.default_for(width, height)
    intr = Intrinsics(
        focal=_get(kv, "intrinsics.focal", float, default_intr.focal),
        cx=_get(kv, "intrinsics.cx", float, default_intr.cx),
        cy=_get(kv, "intrinsics.cy", float, default_intr.cy),
        width=width,
        height=height,
    )

    cfg = RunConfig(
        mesh=resolve("mesh"),
        image=resolve("image"),
        pose=resolve("pose"),
        model=resolve("model"),
        output=resolve("output"),
        loss_log=resolve("loss_log"),
        grid_resolution=_get(kv, "grid.resolution", int, 64),
        grid_bbox=bbox,
        sample_count=_get(kv, "sample.count", int, 2048),
        sample_sigma=_get(kv, "sample.sigma", float, 0.1),
        sample_seed=_get(kv, "sample.seed", int, 0),
        pose_mode=kv.get("pose_mode", "ground_truth"),
        variant=kv.get("variant", "two_stream"),
        margin=_get(kv, "mesh.margin", float, 0.05),
        holdout_count=_get(kv, "holdout.count", int, 2048),
        intrinsics=intr,
        loss=LossParams(
            m1=_get(kv, "loss.m1", float, 4.0),
            m2=_get(kv, "loss.m2", float, 1.0),
            delta=_get(kv, "loss.delta", float, 0.01),
        ),
        train=TrainConfig(
            learning_rate=_get(kv, "train.learning_rate", float, 1e-4),
            batch_size=_get(kv, "train.batch_size", int, 16),
            iterations=_get(kv, "train.iterations", int, 5000),
            seed=_get(kv, "train.seed", int, 0),
            beta1=_get(kv, "train.beta1", float, 0.9),
            beta2=_get(kv, "train.beta2", float, 0.999),
            eps=_get(kv, "train.eps", float, 1e-8),
            global_only=_get(kv, "train.global_only", _parse_bool, False),
        ),
    )
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    for label, p in (("mesh", cfg.mesh), ("image", cfg.image), ("pose", cfg.pose)):
        if p is not None and not os.path.isfile(p):
            raise InvalidConfig(f"{label} path does not exist: {p}")
    if cfg.grid_resolution < 2:
        raise InvalidConfig(f"grid.resolution must be >= 2, got {cfg.grid_resolution}")
    if cfg.sample_count < 1:
        raise InvalidConfig("sample.count must be >= 1")
    if cfg.sample_sigma <= 0:
        raise InvalidConfig("sample.sigma must be positive")
    if cfg.pose_mode not in ("ground_truth", "estimated"):
        raise InvalidConfig(f"unknown pose_mode {cfg.pose_mode!r}")
    if cfg.variant not in ("two_stream", "one_stream", "binary"):
        raise InvalidConfig(f"unknown variant {cfg.variant!r}")
    if not (0 <= cfg.margin < 0.5):
        raise InvalidConfig("mesh.margin must be in [0, 0.5)")
