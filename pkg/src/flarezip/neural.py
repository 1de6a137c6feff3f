"""Slice-enhancing convolutional network with normalization folding.

A fixed four-layer residual net refines reconstructed Z-slices: 3x3 convs
over channels 1->16->16->16->1 with ReLU between them and a skip from the
raw input to the output, so the conv chain learns a correction and the
untrained net (zero-initialized final layer) is the identity.

Slices are instance-normalized to [0, 1] before the first layer. At
inference the normalization is folded into the first layer's weights and
bias (W' = W/range, b' = b - sum(min/range * W)), letting the conv run on
raw data; the folded convolution pads borders with min_i, the raw-space
image of a normalized zero, which makes fusion an exact identity instead
of a border approximation. Degenerate range (max == min) normalizes to all
zeros and folds to W' = 0, b' = b.

Arithmetic: parameters and activations in float32 (float64 shadow available
for gradient checking), reductions accumulated in float64. Training is
plain SGD on the MSE against the original slice, visiting slices in a fixed
order; same seed and data order give bit-identical parameters.

The enhanced output is clamped to recon +- eb_abs so the combined bound
after enhancement is 2*eb_abs; the float32 clamp rails are nudged toward
recon when rounding would let them exceed the float64 bound.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataFormatError, InternalInvariantError

KERNEL = 3
LAYER_CHANNELS = ((1, 16), (16, 16), (16, 16), (16, 1))
PARAM_COUNT = sum(KERNEL * KERNEL * ci * co + co for ci, co in LAYER_CHANNELS)

#: multiply-accumulates per slice point for one forward pass
MACS_PER_POINT = KERNEL * KERNEL * sum(ci * co for ci, co in LAYER_CHANNELS)

DEFAULT_LR = 1e-2


@dataclass(frozen=True)
class ConvNetParams:
    """Weights W[kx, ky, cin, cout] and biases b[cout] for each layer."""

    weights: tuple
    biases: tuple
    seed: int = 0

    @property
    def param_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    @property
    def dtype(self):
        return self.weights[0].dtype


def init_params(seed: int, dtype=np.float32) -> ConvNetParams:
    """He-scaled random hidden layers, zero final layer (identity net)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    biases = []
    for li, (ci, co) in enumerate(LAYER_CHANNELS):
        if li == len(LAYER_CHANNELS) - 1:
            w = np.zeros((KERNEL, KERNEL, ci, co))
        else:
            scale = np.sqrt(2.0 / (KERNEL * KERNEL * ci))
            w = rng.normal(0.0, scale, (KERNEL, KERNEL, ci, co))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(co, dtype=dtype))
    return ConvNetParams(weights=tuple(weights), biases=tuple(biases), seed=seed)


def _im2col(x: np.ndarray, pad_value: float) -> np.ndarray:
    """(H, W, C) -> (H*W, 9*C) patch matrix, (kx, ky, cin) column order."""
    h, w, c = x.shape
    xp = np.full((h + 2, w + 2, c), pad_value, dtype=np.float64)
    xp[1:-1, 1:-1, :] = x
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(0, 1))
    # (H, W, C, 3, 3) -> (H, W, 3, 3, C), cin fastest to match W.reshape
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, KERNEL * KERNEL * c)


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
            pad_value: float = 0.0) -> np.ndarray:
    """Same-shape 3x3 convolution, float64 accumulation."""
    h, wd, ci = x.shape
    co = w.shape[3]
    cols = _im2col(x, pad_value)
    y = cols @ w.astype(np.float64).reshape(-1, co) + b.astype(np.float64)
    return y.reshape(h, wd, co)


def instance_normalize(data: np.ndarray, min_i: float, max_i: float) -> np.ndarray:
    """(D - min)/(max - min) in the input dtype; degenerate range -> zeros."""
    data = np.asarray(data)
    if max_i == min_i:
        return np.zeros_like(data)
    span = np.float64(max_i) - np.float64(min_i)
    return ((data.astype(np.float64) - np.float64(min_i)) / span).astype(data.dtype)


def fold_normalization(w: np.ndarray, b: np.ndarray, min_i: float,
                       max_i: float) -> tuple[np.ndarray, np.ndarray]:
    """Fold (D - min)/range into first-layer weights and bias.

    W' = W/range; b'[o] = b[o] - sum_kxy(min/range * W[kx, ky, 0, o]).
    Degenerate range folds to W' = 0, b' = b, matching all-zero input.
    """
    if max_i == min_i:
        return np.zeros_like(w), b.copy()
    span = np.float64(max_i) - np.float64(min_i)
    wf = (w.astype(np.float64) / span).astype(w.dtype)
    corr = (np.float64(min_i) / span) * w.astype(np.float64).sum(axis=(0, 1, 2))
    bf = (b.astype(np.float64) - corr).astype(b.dtype)
    return wf, bf


def _residual_chain(params: ConvNetParams, first: np.ndarray) -> np.ndarray:
    """Layers 2..4 applied to the first layer's pre-activation output.

    Activations round to the parameter dtype after every layer, matching
    the training forward bit for bit.
    """
    dt = params.dtype
    a = np.maximum(first, 0).astype(dt)
    for li in range(1, len(params.weights)):
        z = _conv2d(a, params.weights[li], params.biases[li]).astype(dt)
        a = np.maximum(z, 0).astype(dt) if li < len(params.weights) - 1 else z
    return a[..., 0]


def forward(params: ConvNetParams, recon: np.ndarray,
            stats: tuple[float, float], fused: bool = True) -> np.ndarray:
    """Enhanced slice: recon + conv-chain residual, shape preserved."""
    recon = np.asarray(recon)
    if recon.ndim != 2 or min(recon.shape) < KERNEL:
        raise DataFormatError(
            f"slice shape {recon.shape} too small for {KERNEL}x{KERNEL} convolution")
    mn, mx = float(stats[0]), float(stats[1])
    dt = params.dtype
    with np.errstate(over="ignore"):
        if fused:
            wf, bf = fold_normalization(params.weights[0], params.biases[0],
                                        mn, mx)
            # pad with min_i: the raw-space value that normalizes to zero
            pad = mn if mx > mn else 0.0
            first = _conv2d(recon.astype(dt)[..., None], wf, bf,
                            pad_value=pad).astype(dt)
        else:
            xn = instance_normalize(recon.astype(dt), mn, mx)
            first = _conv2d(xn[..., None], params.weights[0],
                            params.biases[0]).astype(dt)
        residual = _residual_chain(params, first).astype(dt)
        return (recon.astype(dt) + residual).astype(dt)


def _flip_kernel(w: np.ndarray) -> np.ndarray:
    """W[kx, ky, cin, cout] -> spatially flipped W[kx, ky, cout, cin]."""
    return w[::-1, ::-1].transpose(0, 1, 3, 2)


def loss_and_grads(params: ConvNetParams, recon: np.ndarray, orig: np.ndarray,
                   stats: tuple[float, float]):
    """MSE training loss (unfused forward) and per-layer (dW, db) gradients."""
    recon = np.asarray(recon)
    orig = np.asarray(orig)
    if recon.shape != orig.shape:
        raise DataFormatError("recon/orig slice shapes differ")
    if recon.ndim != 2 or min(recon.shape) < KERNEL:
        raise DataFormatError(
            f"slice shape {recon.shape} too small for {KERNEL}x{KERNEL} convolution")
    mn, mx = float(stats[0]), float(stats[1])
    # overflow to inf is tolerated here; it surfaces as the non-finite-loss
    # abort in train_online
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_and_grads_inner(params, recon, orig, xstats=(mn, mx))


def _loss_and_grads_inner(params, recon, orig, xstats):
    dt = params.dtype
    mn, mx = xstats
    nlayer = len(params.weights)
    xn = instance_normalize(recon.astype(dt), mn, mx)
    a = xn[..., None].astype(dt)
    inputs = []
    preact = []
    for li in range(nlayer):
        inputs.append(a)
        z = _conv2d(a, params.weights[li], params.biases[li]).astype(dt)
        preact.append(z)
        a = np.maximum(z, 0).astype(dt) if li < nlayer - 1 else z
    residual = a[..., 0]
    out = (recon.astype(dt) + residual).astype(dt)

    npix = recon.size
    diff = out.astype(np.float64) - orig.astype(np.float64)
    loss = float(np.mean(diff * diff))

    # backward through the conv chain; the skip passes dL/dout unchanged
    dy = ((2.0 / npix) * diff)[..., None]
    grads = [None] * nlayer
    for li in range(nlayer - 1, -1, -1):
        if li < nlayer - 1:
            dy = dy * (preact[li] > 0)
        x = inputs[li]
        h, wd, _ = x.shape
        co = params.weights[li].shape[3]
        cols = _im2col(x, 0.0)
        dym = dy.reshape(h * wd, co).astype(np.float64)
        dw = (cols.T @ dym).reshape(params.weights[li].shape)
        db = dym.sum(axis=0)
        grads[li] = (dw.astype(dt), db.astype(dt))
        if li > 0:
            # scatter dy back through the conv: pad, convolve with the
            # flipped kernel, crop the padding ring
            dyp = np.zeros((h + 2, wd + 2, co), dtype=np.float64)
            dyp[1:-1, 1:-1, :] = dy
            zero_b = np.zeros(params.weights[li].shape[2])
            dx = _conv2d(dyp, _flip_kernel(params.weights[li]), zero_b)
            dy = dx[1:-1, 1:-1, :]
    return loss, grads


def train_online(params: ConvNetParams, pairs, epochs: int,
                 lr: float = DEFAULT_LR, on_epoch=None) -> ConvNetParams:
    """Plain SGD over (recon, orig, stats) slices in their given order.

    `on_epoch(epoch_index, params)` is called after each epoch when given.
    lr = 0 returns the input parameters bitwise unchanged.
    """
    if epochs < 1:
        raise DataFormatError("training needs epochs >= 1")
    pairs = list(pairs)
    if not pairs:
        raise DataFormatError("training needs at least one slice pair")
    dt = params.dtype
    cur = params
    for epoch in range(epochs):
        for snum, (recon, orig, stats) in enumerate(pairs):
            loss, grads = loss_and_grads(cur, recon, orig, stats)
            if not np.isfinite(loss):
                raise InternalInvariantError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"slice {snum} (lr={lr})")
            with np.errstate(over="ignore", invalid="ignore"):
                ws = tuple((w.astype(np.float64) - lr * dw.astype(np.float64))
                           .astype(dt)
                           for w, (dw, _) in zip(cur.weights, grads))
                bs = tuple((b.astype(np.float64) - lr * db.astype(np.float64))
                           .astype(dt)
                           for b, (_, db) in zip(cur.biases, grads))
            cur = dataclasses.replace(cur, weights=ws, biases=bs)
        if on_epoch is not None:
            on_epoch(epoch, cur)
    return cur


def enhance_and_clamp(recon: np.ndarray, residual: np.ndarray,
                      eb_abs: float) -> np.ndarray:
    """clamp(recon + residual, recon - eb_abs, recon + eb_abs) in float32.

    Rails are nudged one ulp toward recon where float32 rounding pushed
    them past the float64 bound, so |out - recon| <= eb_abs holds exactly.
    """
    recon = np.asarray(recon, dtype=np.float32)
    residual = np.asarray(residual, dtype=np.float32)
    if recon.shape != residual.shape:
        raise DataFormatError("recon/residual shapes differ")
    e32 = np.float32(eb_abs)
    if float(e32) > eb_abs:
        e32 = np.nextafter(e32, np.float32(0))
    hi = recon + e32
    lo = recon - e32
    r64 = recon.astype(np.float64)
    over = hi.astype(np.float64) - r64 > eb_abs
    if over.any():
        hi = np.where(over, np.nextafter(hi, np.float32(-np.inf)), hi)
    under = r64 - lo.astype(np.float64) > eb_abs
    if under.any():
        lo = np.where(under, np.nextafter(lo, np.float32(np.inf)), lo)
    return np.clip(recon + residual, lo, hi)


def serialize_params(params: ConvNetParams) -> np.ndarray:
    """Flat float32 array, fixed layer order: W then b per layer."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(np.asarray(w, dtype=np.float32).ravel())
        parts.append(np.asarray(b, dtype=np.float32).ravel())
    return np.concatenate(parts)


def parse_params(flat: np.ndarray, seed: int = 0) -> ConvNetParams:
    """Inverse of serialize_params."""
    flat = np.asarray(flat, dtype=np.float32)
    if flat.size != PARAM_COUNT:
        raise DataFormatError(
            f"parameter array holds {flat.size} scalars, expected {PARAM_COUNT}")
    weights = []
    biases = []
    pos = 0
    for ci, co in LAYER_CHANNELS:
        wn = KERNEL * KERNEL * ci * co
        weights.append(flat[pos:pos + wn].reshape(KERNEL, KERNEL, ci, co).copy())
        pos += wn
        biases.append(flat[pos:pos + co].copy())
        pos += co
    return ConvNetParams(weights=tuple(weights), biases=tuple(biases), seed=seed)
