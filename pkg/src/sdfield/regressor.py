"""Trainable SDF regressor with projective local features.

Architecture: a point-lifting MLP (3 -> 64 -> 256 -> 512, ReLU) feeds one or
two decoder MLPs (hidden 512 -> 256, ReLU, linear scalar output). The
two-stream variant sums a global-feature decoder and a local-feature decoder;
the one-stream variant concatenates everything into a single decoder; the
binary variant squashes the two-stream sum through a sigmoid and trains with
cross entropy on the inside/outside label.

All gradients are reverse-mode and hand-written; training uses Adam with the
batch loss summed (not averaged) over points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose, Intrinsics
from .encoder import (
    EncoderParams,
    encode_image_with_cache,
    encoder_backward,
    glorot_uniform,
    init_encoder_params,
    local_features,
    local_features_backward,
)
from .errors import EmptyDataset, ParseError, ShapeError, ValidationError
from .grid import PointSample, samples_to_arrays
from .image import Image

LIFT_DIMS = (3, 64, 256, 512)
DECODER_HIDDEN = (512, 256)
VARIANTS = ("two_stream", "one_stream", "binary")

MODEL_MAGIC = b"DISN"
MODEL_VERSION = 1


# ---------------- MLP core ----------------


@dataclass
class MlpParams:
    weights: list  # (d_in, d_out) matrices
    biases: list
    activations: list  # 'relu' or 'linear' per layer

    def __post_init__(self):
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"layer {i} input dim does not chain")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ShapeError("bias length must match layer output dim")
        if len(self.activations) != len(self.weights):
            raise ShapeError("one activation tag per layer required")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_mlp(rng, dims, hidden="relu", output="linear") -> MlpParams:
    weights, biases, acts = [], [], []
    for i in range(len(dims) - 1):
        weights.append(glorot_uniform(rng, dims[i], dims[i + 1], (dims[i], dims[i + 1])))
        biases.append(np.zeros(dims[i + 1]))
        acts.append(hidden if i < len(dims) - 2 else output)
    return MlpParams(weights, biases, acts)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Returns (output, cache); x is (N, in_dim)."""
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"expected (N, {params.in_dim}) input, got {x.shape}")
    cache = []
    for w, b, act in zip(params.weights, params.biases, params.activations):
        z = x @ w + b
        cache.append((x, z))
        x = np.maximum(z, 0.0) if act == "relu" else z
    return x, cache


def mlp_backward(params: MlpParams, cache, dy: np.ndarray):
    """Returns (dx, dweights, dbiases) for upstream gradient dy on the output."""
    dw_list = [None] * len(params.weights)
    db_list = [None] * len(params.weights)
    for i in reversed(range(len(params.weights))):
        x, z = cache[i]
        dz = dy * (z > 0.0) if params.activations[i] == "relu" else dy
        dw_list[i] = x.T @ dz
        db_list[i] = dz.sum(axis=0)
        dy = dz @ params.weights[i].T
    return dy, dw_list, db_list


# ---------------- model ----------------


@dataclass
class SdfModel:
    encoder: EncoderParams
    point_lift: MlpParams
    global_decoder: MlpParams
    local_decoder: MlpParams | None
    variant: str

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        lift_out = self.point_lift.out_dim
        g, l = self.encoder.global_dim, self.encoder.local_dim
        if self.variant == "one_stream":
            if self.local_decoder is not None:
                raise ShapeError("one_stream uses a single decoder")
            if self.global_decoder.in_dim != lift_out + g + l:
                raise ShapeError("one_stream decoder input dim mismatch")
        else:
            if self.local_decoder is None:
                raise ShapeError(f"{self.variant} needs both decoders")
            if self.global_decoder.in_dim != lift_out + g:
                raise ShapeError("global decoder input dim mismatch")
            if self.local_decoder.in_dim != lift_out + l:
                raise ShapeError("local decoder input dim mismatch")

    def copy(self) -> "SdfModel":
        return SdfModel(
            self.encoder.copy(),
            self.point_lift.copy(),
            self.global_decoder.copy(),
            None if self.local_decoder is None else self.local_decoder.copy(),
            self.variant,
        )

    def param_arrays(self) -> list:
        """All parameter arrays in declaration (= serialization) order."""
        out = self.encoder.arrays() + self.point_lift.arrays()
        out += self.global_decoder.arrays()
        if self.local_decoder is not None:
            out += self.local_decoder.arrays()
        return out


def build_sdf_model(
    variant: str = "two_stream",
    seed: int = 0,
    image_size=(128, 128),
    in_channels: int = 1,
    encoder_channels=(8, 16, 32),
    lift_dims=LIFT_DIMS,
    decoder_hidden=DECODER_HIDDEN,
) -> SdfModel:
    rng = np.random.default_rng(seed)
    enc = init_encoder_params(rng, image_size, in_channels, encoder_channels)
    lift = init_mlp(rng, lift_dims, hidden="relu", output="relu")
    lift_out = lift_dims[-1]
    g, l = enc.global_dim, enc.local_dim
    if variant == "one_stream":
        gdec = init_mlp(rng, (lift_out + g + l, *decoder_hidden, 1))
        ldec = None
    else:
        gdec = init_mlp(rng, (lift_out + g, *decoder_hidden, 1))
        ldec = init_mlp(rng, (lift_out + l, *decoder_hidden, 1))
    return SdfModel(enc, lift, gdec, ldec, variant)


# ---------------- forward passes ----------------


def _as_batch(vec, n):
    v = np.asarray(vec, dtype=np.float64)
    return np.broadcast_to(v, (n, v.shape[-1])) if v.ndim == 1 else v


def forward_batch(model: SdfModel, global_feat, local_feat, points):
    """Raw model output for (N,) points; (values, caches).

    For regression variants the value is the predicted signed distance; for
    the binary variant it is the pre-sigmoid logit.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    g = _as_batch(global_feat, n)
    l = _as_batch(local_feat, n)
    pf, lift_cache = mlp_forward(model.point_lift, points)
    if model.variant == "one_stream":
        x = np.concatenate([pf, g, l], axis=1)
        y, dec_cache = mlp_forward(model.global_decoder, x)
        return y[:, 0], (lift_cache, dec_cache, None)
    xg = np.concatenate([pf, g], axis=1)
    xl = np.concatenate([pf, l], axis=1)
    yg, g_cache = mlp_forward(model.global_decoder, xg)
    yl, l_cache = mlp_forward(model.local_decoder, xl)
    return yg[:, 0] + yl[:, 0], (lift_cache, g_cache, l_cache)


def predict_sdf(model: SdfModel, global_feat, local_feat, p) -> float:
    """Two-stream prediction: global-decoder output plus local-decoder output."""
    if model.variant != "two_stream":
        raise ShapeError(f"predict_sdf needs a two_stream model, got {model.variant}")
    return float(forward_batch(model, global_feat, local_feat, p)[0][0])


def predict_sdf_one_stream(model: SdfModel, global_feat, local_feat, p) -> float:
    if model.variant != "one_stream":
        raise ShapeError("predict_sdf_one_stream needs a one_stream model")
    return float(forward_batch(model, global_feat, local_feat, p)[0][0])


def sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500))),
                    np.exp(np.clip(z, -500, 500)) / (1.0 + np.exp(np.clip(z, -500, 500))))


def predict_inside_prob(model: SdfModel, global_feat, local_feat, p) -> float:
    """Probability of the point lying inside the surface (binary variant)."""
    if model.variant != "binary":
        raise ShapeError("predict_inside_prob needs a binary model")
    logit = forward_batch(model, global_feat, local_feat, p)[0][0]
    return float(sigmoid(logit))


# ---------------- losses ----------------


@dataclass(frozen=True)
class LossParams:
    """Weighted L1 parameters: weight m1 below the delta threshold, m2 above."""

    m1: float = 4.0
    m2: float = 1.0
    delta: float = 0.01

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0:
            raise ValidationError("loss weights must be positive")


def point_weights(gt, lp: LossParams) -> np.ndarray:
    """m1 where the ground-truth distance is below delta (one-sided), else m2."""
    gt = np.asarray(gt, dtype=np.float64)
    return np.where(gt < lp.delta, lp.m1, lp.m2)


def sdf_loss(pred: float, gt: float, lp: LossParams = LossParams()) -> float:
    """Per-point weighted L1 error."""
    return float(point_weights(gt, lp) * abs(pred - gt))


def batch_sdf_loss(preds, gts, lp: LossParams = LossParams()) -> float:
    """Sum of weighted L1 errors over the batch."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    return float((point_weights(gts, lp) * np.abs(preds - gts)).sum())


def binary_loss(prob: float, gt: float) -> float:
    """Cross entropy against the inside label (gt < 0)."""
    label = 1.0 if gt < 0 else 0.0
    p = min(max(prob, 1e-300), 1.0 - 1e-16)
    return float(-(label * np.log(p) + (1.0 - label) * np.log(1.0 - p)))


def _output_grad(values, gts, lp, variant):
    """dL/d(raw output) for the summed batch loss; also returns the loss."""
    gts = np.asarray(gts, dtype=np.float64)
    if variant == "binary":
        labels = (gts < 0).astype(np.float64)
        z = values
        # Stable sum of softplus(z) - label * z terms.
        loss = float((np.maximum(z, 0.0) - labels * z + np.log1p(np.exp(-np.abs(z)))).sum())
        return loss, sigmoid(z) - labels
    w = point_weights(gts, lp)
    r = values - gts
    loss = float((w * np.abs(r)).sum())
    return loss, w * np.sign(r)  # sign(0) = 0: L1 subgradient at zero


# ---------------- end-to-end gradients ----------------


@dataclass
class ModelGrads:
    encoder_w: list
    encoder_b: list
    lift_w: list
    lift_b: list
    gdec_w: list
    gdec_b: list
    ldec_w: list | None
    ldec_b: list | None

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.encoder_w, self.encoder_b):
            out += [w, b]
        for w, b in zip(self.lift_w, self.lift_b):
            out += [w, b]
        for w, b in zip(self.gdec_w, self.gdec_b):
            out += [w, b]
        if self.ldec_w is not None:
            for w, b in zip(self.ldec_w, self.ldec_b):
                out += [w, b]
        return out


@dataclass
class TrainingBatch:
    """One optimization batch: an image plus index-aligned points and targets.

    qs holds each point's projection in original-image pixel coordinates.
    """

    image: Image
    qs: np.ndarray
    points: np.ndarray
    gt: np.ndarray


def batch_loss_and_grads(
    model: SdfModel, batch: TrainingBatch, lp: LossParams = LossParams()
):
    """Summed batch loss and gradients for every parameter group.

    The chain runs decoder -> point lift and decoder -> sampled features ->
    encoder maps -> convolution kernels, so encoder parameters receive
    gradient through both the local samples and the global mean pool.
    """
    enc_cache = encode_image_with_cache(batch.image, model.encoder)
    stack = enc_cache.stack
    lfeat = local_features(stack, batch.qs)
    gfeat = stack.global_vec
    values, caches = forward_batch(model, gfeat, lfeat, batch.points)
    loss, dvalues = _output_grad(values, batch.gt, lp, model.variant)

    lift_cache, g_cache, l_cache = caches
    n = len(batch.points)
    lift_out = model.point_lift.out_dim
    g_dim = model.encoder.global_dim
    dy = dvalues[:, None]

    if model.variant == "one_stream":
        dx, gdw, gdb = mlp_backward(model.global_decoder, g_cache, dy)
        dpf = dx[:, :lift_out]
        dg = dx[:, lift_out : lift_out + g_dim]
        dl = dx[:, lift_out + g_dim :]
        ldw = ldb = None
    else:
        dxg, gdw, gdb = mlp_backward(model.global_decoder, g_cache, dy)
        dxl, ldw, ldb = mlp_backward(model.local_decoder, l_cache, dy)
        dpf = dxg[:, :lift_out] + dxl[:, :lift_out]
        dg = dxg[:, lift_out:]
        dl = dxl[:, lift_out:]

    _, lw, lb = mlp_backward(model.point_lift, lift_cache, dpf)

    dglobal = dg.sum(axis=0)
    dlayers = local_features_backward(stack, batch.qs, dl)
    enc_w, enc_b = encoder_backward(enc_cache, model.encoder, dlayers, dglobal)
    grads = ModelGrads(enc_w, enc_b, lw, lb, gdw, gdb, ldw, ldb)
    return loss, grads


def backward(model: SdfModel, batch: TrainingBatch, lp: LossParams = LossParams()) -> ModelGrads:
    """Gradients of the summed batch loss for all parameters."""
    return batch_loss_and_grads(model, batch, lp)[1]


# ---------------- training ----------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    iterations: int = 5000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    global_only: bool = False  # freeze the local decoder at zero (ablation)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ValidationError("train config values out of range")


@dataclass
class TrainingView:
    image: Image
    pose: CameraPose


@dataclass
class TrainingSet:
    """Views plus ground-truth point samples of a single shape."""

    views: list
    points: np.ndarray
    gt: np.ndarray
    intrinsics: Intrinsics

    @staticmethod
    def from_samples(views, samples: list[PointSample], intrinsics: Intrinsics):
        points, gt = samples_to_arrays(samples)
        return TrainingSet(list(views), points, gt, intrinsics)


def project_with_clamp(pose: CameraPose, intr: Intrinsics, points):
    """Projection that clamps non-positive depths instead of raising.

    Returns (qs, failed) where failed marks points at or behind the camera
    plane; their projections use a tiny positive depth.
    """
    p_cam = np.atleast_2d(np.asarray(points, dtype=np.float64)) @ pose.R.T + pose.t
    z = p_cam[:, 2]
    failed = z <= 1e-9
    z = np.where(failed, 1e-9, z)
    qs = np.stack(
        [intr.focal * p_cam[:, 0] / z + intr.cx, intr.focal * p_cam[:, 1] / z + intr.cy],
        axis=1,
    )
    return qs, failed


class AdamState:
    def __init__(self, arrays, lr, beta1, beta2, eps):
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0

    def step(self, arrays, grads, frozen=None):
        self.step_count += 1
        b1c = 1 - self.beta1**self.step_count
        b2c = 1 - self.beta2**self.step_count
        for i, (a, g) in enumerate(zip(arrays, grads)):
            if frozen is not None and frozen[i]:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            a -= self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)


def train(
    model: SdfModel,
    dataset: TrainingSet,
    cfg: TrainConfig = TrainConfig(),
    loss_params: LossParams = LossParams(),
):
    """Seeded Adam training; returns (trained copy, per-iteration loss log).

    Each iteration encodes one view (round-robin) and optimizes the summed
    weighted loss on a without-replacement batch of sample points. The input
    model is not modified.
    """
    if not dataset.views or len(dataset.points) == 0:
        raise EmptyDataset("training needs at least one view and one sample")
    model = model.copy()
    if cfg.global_only:
        if model.local_decoder is None:
            raise ValidationError("global_only requires a two-decoder model")
        for a in model.local_decoder.arrays():
            a[...] = 0.0

    n_points = len(dataset.points)
    batch = min(cfg.batch_size, n_points)
    qs_per_view = [
        project_with_clamp(v.pose, dataset.intrinsics, dataset.points)[0]
        for v in dataset.views
    ]

    params = model.param_arrays()
    frozen = [False] * len(params)
    if cfg.global_only:
        n_ldec = len(model.local_decoder.arrays())
        for i in range(len(params) - n_ldec, len(params)):
            frozen[i] = True
    adam = AdamState(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)

    loss_log: list[float] = []
    for it in range(cfg.iterations):
        view_idx = it % len(dataset.views)
        idx = rng.choice(n_points, size=batch, replace=False)
        tb = TrainingBatch(
            image=dataset.views[view_idx].image,
            qs=qs_per_view[view_idx][idx],
            points=dataset.points[idx],
            gt=dataset.gt[idx],
        )
        loss, grads = batch_loss_and_grads(model, tb, loss_params)
        adam.step(params, grads.arrays(), frozen)
        loss_log.append(loss)
    return model, loss_log


# ---------------- persistence ----------------


def _dims_of(mlp: MlpParams):
    return [mlp.weights[0].shape[0]] + [w.shape[1] for w in mlp.weights]


def save_model(path, model: SdfModel) -> None:
    """DISN binary format: magic, u32 version, text header, f32 parameters."""
    header = [
        f"variant={model.variant}",
        f"encoder.input={model.encoder.input_size[0]}x{model.encoder.input_size[1]}",
        f"encoder.in_channels={model.encoder.in_channels}",
        "encoder.channels=" + ",".join(str(c) for c in model.encoder.channels),
        "point_lift.dims=" + ",".join(str(d) for d in _dims_of(model.point_lift)),
        "global_decoder.dims=" + ",".join(str(d) for d in _dims_of(model.global_decoder)),
    ]
    if model.local_decoder is not None:
        header.append(
            "local_decoder.dims=" + ",".join(str(d) for d in _dims_of(model.local_decoder))
        )
    blob = ("\n".join(header) + "\n\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(np.uint32(MODEL_VERSION).newbyteorder("<").tobytes())
        fh.write(blob)
        for arr in model.param_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> SdfModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ParseError(f"bad magic {data[:4]!r}", path)
    version = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}", path)
    end = data.find(b"\n\n", 8)
    if end < 0:
        raise ParseError("model header not terminated by a blank line", path)
    fields = {}
    for line in data[8:end].decode("utf-8").splitlines():
        if "=" not in line:
            raise ParseError(f"malformed header line {line!r}", path)
        k, v = line.split("=", 1)
        fields[k.strip()] = v.strip()
    try:
        variant = fields["variant"]
        w, h = (int(x) for x in fields["encoder.input"].split("x"))
        in_channels = int(fields["encoder.in_channels"])
        channels = tuple(int(c) for c in fields["encoder.channels"].split(","))
        lift_dims = tuple(int(d) for d in fields["point_lift.dims"].split(","))
        gdec_dims = tuple(int(d) for d in fields["global_decoder.dims"].split(","))
        ldec_dims = (
            tuple(int(d) for d in fields["local_decoder.dims"].split(","))
            if "local_decoder.dims" in fields
            else None
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad model header: {exc}", path)

    model = build_sdf_model(
        variant=variant,
        seed=0,
        image_size=(w, h),
        in_channels=in_channels,
        encoder_channels=channels,
        lift_dims=lift_dims,
        decoder_hidden=gdec_dims[1:-1],
    )
    if ldec_dims is not None and model.local_decoder is not None:
        expect = tuple(_dims_of(model.local_decoder))
        if expect != ldec_dims:
            raise ParseError(f"local decoder dims {ldec_dims} != expected {expect}", path)

    offset = end + 2
    for arr in model.param_arrays():
        n = arr.size
        vals = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        if vals.size != n:
            raise ParseError("truncated parameter block", path)
        arr[...] = vals.astype(np.float64).reshape(arr.shape)
        offset += 4 * n
    if offset != len(data):
        raise ParseError("trailing bytes after parameter block", path)
    return model


def save_loss_log(path, losses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, v in enumerate(losses):
            fh.write(f"{i} {v!r}\n")


def load_loss_log(path) -> list[float]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ParseError("expected `iter loss`", path, lineno)
            out.append(float(parts[1]))
    return out
