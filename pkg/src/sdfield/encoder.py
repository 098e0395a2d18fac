"""Tiny convolutional image encoder and projective local-feature sampling.

The encoder is three 3x3 stride-2 ReLU convolutions (8/16/32 channels by
default). Local features for a query pixel are the concatenated bilinear
samples of every layer's activation map; the global feature is the spatial
mean of the last layer. Forward passes cache enough to run the hand-written
backward pass used in end-to-end training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .image import Image

KERNEL = 3
STRIDE = 2
DEFAULT_CHANNELS = (8, 16, 32)


def glorot_uniform(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class EncoderParams:
    """Convolution kernels (3, 3, c_in, c_out) and biases per layer."""

    weights: list
    biases: list
    input_size: tuple[int, int]  # (width, height)
    in_channels: int = 1

    def __post_init__(self):
        w, h = self.input_size
        divisor = STRIDE ** len(self.weights)
        if w % divisor or h % divisor:
            raise ShapeError(
                f"input size {self.input_size} must be divisible by {divisor}"
            )
        c_prev = self.in_channels
        for i, (k, b) in enumerate(zip(self.weights, self.biases)):
            if k.shape[:3] != (KERNEL, KERNEL, c_prev) or b.shape != (k.shape[3],):
                raise ShapeError(f"layer {i} kernel/bias shapes inconsistent")
            c_prev = k.shape[3]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(int(k.shape[3]) for k in self.weights)

    @property
    def local_dim(self) -> int:
        return sum(self.channels)

    @property
    def global_dim(self) -> int:
        return self.channels[-1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.input_size,
            self.in_channels,
        )

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_encoder_params(
    seed_or_rng, input_size=(128, 128), in_channels=1, channels=DEFAULT_CHANNELS
) -> EncoderParams:
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    weights, biases = [], []
    c_prev = in_channels
    for c in channels:
        fan_in = KERNEL * KERNEL * c_prev
        fan_out = KERNEL * KERNEL * c
        weights.append(glorot_uniform(rng, fan_in, fan_out, (KERNEL, KERNEL, c_prev, c)))
        biases.append(np.zeros(c))
        c_prev = c
    return EncoderParams(weights, biases, tuple(input_size), in_channels)


@dataclass(frozen=True)
class FeatureMapStack:
    """Per-layer activation maps (H, W, C) plus the global feature vector."""

    layers: tuple
    global_vec: np.ndarray
    image_size: tuple[int, int]  # (width, height) of the encoded image

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            ph, pw = self.layers[i - 1].shape[:2]
            h, w = self.layers[i].shape[:2]
            if (h, w) != (ph // 2, pw // 2):
                raise ShapeError("each layer must halve the previous resolution")
        if self.global_vec.shape != (self.layers[-1].shape[2],):
            raise ShapeError("global vector length must match final layer channels")

    @property
    def local_dim(self) -> int:
        return sum(layer.shape[2] for layer in self.layers)


def _conv_patches(x: np.ndarray) -> np.ndarray:
    """im2col for 3x3 stride-2 pad-1: (H//2 * W//2, 9 * C)."""
    h, w, c = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (KERNEL, KERNEL), axis=(0, 1))
    win = win[::STRIDE, ::STRIDE]  # (H//2, W//2, C, 3, 3)
    win = win.transpose(0, 1, 3, 4, 2)  # (H//2, W//2, 3, 3, C)
    return np.ascontiguousarray(win).reshape(-1, KERNEL * KERNEL * c)


def _conv_forward(x, kernel, bias):
    h, w, c = x.shape
    oh, ow = h // STRIDE, w // STRIDE
    cols = _conv_patches(x)
    z = cols @ kernel.reshape(-1, kernel.shape[3]) + bias
    return z.reshape(oh, ow, -1), cols


def _conv_backward(dz, cols, kernel, x_shape):
    """Gradients of a conv layer given dL/dz (pre-activation)."""
    h, w, c = x_shape
    oh, ow = h // STRIDE, w // STRIDE
    dz_flat = dz.reshape(-1, dz.shape[2])
    dw = (cols.T @ dz_flat).reshape(kernel.shape)
    db = dz_flat.sum(axis=0)
    dcols = dz_flat @ kernel.reshape(-1, kernel.shape[3]).T
    dcols = dcols.reshape(oh, ow, KERNEL, KERNEL, c)
    dpad = np.zeros((h + 2, w + 2, c))
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            dpad[ki : ki + STRIDE * oh : STRIDE, kj : kj + STRIDE * ow : STRIDE] += (
                dcols[:, :, ki, kj, :]
            )
    return dw, db, dpad[1:-1, 1:-1]


class EncoderCache:
    """Intermediates of one encoder forward pass, consumed by backward."""

    def __init__(self, inputs, cols, zs, stack):
        self.inputs = inputs
        self.cols = cols
        self.zs = zs
        self.stack = stack


def encode_image_with_cache(img: Image, params: EncoderParams) -> EncoderCache:
    px = img.pixels
    if (img.width, img.height) != params.input_size or img.channels != params.in_channels:
        raise ShapeError(
            f"image {img.width}x{img.height}x{img.channels} does not match encoder "
            f"input {params.input_size} with {params.in_channels} channel(s)"
        )
    x = px
    inputs, all_cols, zs, layers = [], [], [], []
    for kernel, bias in zip(params.weights, params.biases):
        inputs.append(x)
        z, cols = _conv_forward(x, kernel, bias)
        all_cols.append(cols)
        zs.append(z)
        x = np.maximum(z, 0.0)
        layers.append(x)
    global_vec = layers[-1].mean(axis=(0, 1))
    stack = FeatureMapStack(tuple(layers), global_vec, (img.width, img.height))
    return EncoderCache(inputs, all_cols, zs, stack)


def encode_image(img: Image, params: EncoderParams) -> FeatureMapStack:
    """Deterministic forward pass producing the multi-scale feature stack."""
    return encode_image_with_cache(img, params).stack


def encoder_backward(cache: EncoderCache, params: EncoderParams, dlayers, dglobal):
    """Backprop per-layer map gradients plus a global-vector gradient.

    dlayers: list of (H, W, C) gradients on post-ReLU maps (entries may be
    None); dglobal: gradient on the global vector or None.
    Returns (dweights, dbiases) matching params.
    """
    n = len(params.weights)
    grads_w = [None] * n
    grads_b = [None] * n
    upstream = None
    for i in reversed(range(n)):
        da = np.zeros_like(cache.zs[i])
        if dlayers is not None and dlayers[i] is not None:
            da += dlayers[i]
        if i == n - 1 and dglobal is not None:
            h, w, _ = cache.zs[i].shape
            da += dglobal[None, None, :] / (h * w)
        if upstream is not None:
            da += upstream
        dz = da * (cache.zs[i] > 0.0)
        dw, db, dx = _conv_backward(dz, cache.cols[i], params.weights[i], cache.inputs[i].shape)
        grads_w[i] = dw
        grads_b[i] = db
        upstream = dx
    return grads_w, grads_b


# ---------------- feature sampling ----------------


def _bilinear_weights(fmap_shape, q, image_size):
    h, w = fmap_shape[:2]
    img_w, img_h = image_size
    gx = np.clip(np.asarray(q)[..., 0] * (w / img_w), 0.0, w - 1.0)
    gy = np.clip(np.asarray(q)[..., 1] * (h / img_h), 0.0, h - 1.0)
    x0 = np.minimum(gx.astype(np.int64), w - 1)
    y0 = np.minimum(gy.astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    return (y0, x0, y1, x1), (fx, fy)


def bilinear_sample(fmap: np.ndarray, q, image_size=None) -> np.ndarray:
    """Bilinear sample of a (H, W, C) map at original-image pixel position q.

    q is scaled by (map / image) per axis and clamped to the texel range, so
    out-of-frame queries return the nearest border texel.
    """
    if image_size is None:
        image_size = (fmap.shape[1], fmap.shape[0])
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    (y0, x0, y1, x1), (fx, fy) = _bilinear_weights(fmap.shape, q, image_size)
    out = (
        fmap[y0, x0] * ((1 - fx) * (1 - fy))[:, None]
        + fmap[y0, x1] * (fx * (1 - fy))[:, None]
        + fmap[y1, x0] * ((1 - fx) * fy)[:, None]
        + fmap[y1, x1] * (fx * fy)[:, None]
    )
    return out[0] if single else out


def bilinear_sample_backward(fmap_shape, q, image_size, dout) -> np.ndarray:
    """Scatter dL/d(sample) back onto a zero map of fmap_shape."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    dout = np.atleast_2d(dout)
    (y0, x0, y1, x1), (fx, fy) = _bilinear_weights(fmap_shape, q, image_size)
    dmap = np.zeros(fmap_shape)
    np.add.at(dmap, (y0, x0), dout * ((1 - fx) * (1 - fy))[:, None])
    np.add.at(dmap, (y0, x1), dout * (fx * (1 - fy))[:, None])
    np.add.at(dmap, (y1, x0), dout * ((1 - fx) * fy)[:, None])
    np.add.at(dmap, (y1, x1), dout * (fx * fy)[:, None])
    return dmap


def local_features(stack: FeatureMapStack, q) -> np.ndarray:
    """Concatenated bilinear samples of every layer, in layer order."""
    if not stack.layers:
        raise ShapeError("feature stack has no layers")
    parts = [bilinear_sample(layer, q, stack.image_size) for layer in stack.layers]
    return np.concatenate(parts, axis=-1)


def local_features_backward(stack: FeatureMapStack, q, dout):
    """Per-layer map gradients for the concatenated local features."""
    grads = []
    offset = 0
    dout = np.atleast_2d(dout)
    for layer in stack.layers:
        c = layer.shape[2]
        grads.append(
            bilinear_sample_backward(
                layer.shape, q, stack.image_size, dout[:, offset : offset + c]
            )
        )
        offset += c
    return grads


def pool_multiview(stacks, qs):
    """Elementwise max of per-view global vectors and local feature vectors."""
    if len(stacks) < 1 or len(stacks) != len(qs):
        raise ShapeError("need one query position per view")
    ref = stacks[0]
    for s in stacks[1:]:
        if len(s.layers) != len(ref.layers) or any(
            a.shape != b.shape for a, b in zip(s.layers, ref.layers)
        ):
            raise ShapeError("feature stacks are structurally different")
    globals_ = np.stack([s.global_vec for s in stacks])
    locals_ = np.stack([local_features(s, q) for s, q in zip(stacks, qs)])
    return globals_.max(axis=0), locals_.max(axis=0)


def interpolate_features(fa: np.ndarray, fb: np.ndarray, alpha: float) -> np.ndarray:
    """(1 - alpha) * fa + alpha * fb, elementwise."""
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.shape != fb.shape:
        raise ShapeError(f"feature lengths differ: {fa.shape} vs {fb.shape}")
    return (1.0 - alpha) * fa + alpha * fb
