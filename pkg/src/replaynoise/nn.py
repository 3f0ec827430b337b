"""Dense-tensor layers with hand-written gradients.

Exactly the pieces the light CNN needs: same/valid 2-D convolution,
floor-mode max pooling, max-feature-map activations (pairwise max over two
channel groups, max + median over three), affine layers, inverted dropout,
stabilized softmax cross-entropy, and Adam.  Everything is a pure function
over numpy arrays; each forward op has a matching ``*_backward`` that
recomputes what it needs from the saved inputs.

Spatial ops accept either a single (H, W, C) tensor or a batch (N, H, W, C)
and return the same rank.  Dense ops likewise accept (n,) or (N, n).
Arrays keep whatever float dtype they come in with; gradient tests run the
same code in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def assert_finite(x: np.ndarray, name: str = "tensor") -> None:
    """Raise if any value is NaN or infinite."""
    if not np.isfinite(x).all():
        raise FloatingPointError(f"non-finite values in {name}")


def _as_batch(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == rank:
        return x, False
    if x.ndim == rank - 1:
        return x[None], True
    raise ValueError(f"expected rank {rank - 1} or {rank} tensor, got shape {x.shape}")


def _unbatch(y: np.ndarray, squeezed: bool) -> np.ndarray:
    return y[0] if squeezed else y


def _conv_geometry(in_size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Output size and (lo, hi) zero padding for one spatial axis."""
    if padding == "same":
        out = -(-in_size // stride)  # ceil
        total = max((out - 1) * stride + k - in_size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if k > in_size:
            raise ValueError(f"kernel {k} exceeds input size {in_size} with valid padding")
        return (in_size - k) // stride + 1, 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """Strided view (N, oh, ow, kh, kw, C) over a padded (N, H, W, C) array."""
    n, _, _, c = xp.shape
    sn, srow, scol, sc = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, kh, kw, c),
        strides=(sn, sh * srow, sw * scol, srow, scol, sc),
        writeable=False,
    )


def _im2col(
    x4: np.ndarray, kh: int, kw: int, stride: tuple[int, int], padding: str
) -> tuple[np.ndarray, tuple]:
    """Patch matrix (N*oh*ow, kh*kw*Cin) plus the geometry needed to undo it."""
    sh, sw = stride
    oh, pt, pb = _conv_geometry(x4.shape[1], kh, sh, padding)
    ow, pl, pr = _conv_geometry(x4.shape[2], kw, sw, padding)
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {(kh, kw)} too large for input {x4.shape[1:3]}")
    xp = np.pad(x4, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    win = _windows(xp, kh, kw, sh, sw, oh, ow)
    cols = win.reshape(x4.shape[0] * oh * ow, kh * kw * x4.shape[3])
    return cols, (oh, ow, pt, pl, xp.shape)


def conv2d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    stride: tuple[int, int] = (1, 1),
    padding: str = "same",
    return_cols: bool = False,
):
    """Cross-correlate (H, W, Cin) with (kh, kw, Cin, Cout) weights plus bias.

    Same padding pads with zeros so out = ceil(in / stride) per axis.  With
    ``return_cols`` the (output, patch matrix) pair is returned so a later
    backward pass can skip the im2col step.
    """
    x4, squeezed = _as_batch(x, 4)
    kh, kw, cin, cout = w.shape
    if x4.shape[3] != cin:
        raise ValueError(f"input channels {x4.shape[3]} != kernel channels {cin}")
    cols, (oh, ow, _, _, _) = _im2col(x4, kh, kw, stride, padding)
    y = (cols @ w.reshape(kh * kw * cin, cout) + b).reshape(x4.shape[0], oh, ow, cout)
    out = _unbatch(y, squeezed)
    return (out, cols) if return_cols else out


def conv2d_backward(
    dout: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    stride: tuple[int, int] = (1, 1),
    padding: str = "same",
    cols: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv2d given upstream dout.

    ``cols`` may pass in the patch matrix from the forward pass to skip
    recomputing it.
    """
    x4, squeezed = _as_batch(x, 4)
    d4, _ = _as_batch(dout, 4)
    kh, kw, cin, cout = w.shape
    sh, sw = stride
    if cols is None:
        cols, geo = _im2col(x4, kh, kw, stride, padding)
    else:
        geo = _im2col_geometry_only(x4, kh, kw, stride, padding)
    oh, ow, pt, pl, padded_shape = geo

    dmat = d4.reshape(-1, cout)
    db = dmat.sum(axis=0)
    dw = (cols.T @ dmat).reshape(kh, kw, cin, cout)
    if (kh, kw) == (1, 1) and (sh, sw) == (1, 1) and padded_shape == x4.shape:
        dx = (dmat @ w[0, 0].T).reshape(x4.shape)
        return _unbatch(dx, squeezed), dw, db
    dxp = np.zeros(padded_shape, dtype=d4.dtype)
    for i in range(kh):
        for j in range(kw):
            # each (i, j) slice hits distinct cells, so += is safe
            patch = (dmat @ w[i, j].T).reshape(d4.shape[0], oh, ow, cin)
            dxp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += patch
    dx = dxp[:, pt:pt + x4.shape[1], pl:pl + x4.shape[2], :]
    return _unbatch(dx, squeezed), dw, db


def _im2col_geometry_only(x4, kh, kw, stride, padding):
    sh, sw = stride
    oh, pt, pb = _conv_geometry(x4.shape[1], kh, sh, padding)
    ow, pl, pr = _conv_geometry(x4.shape[2], kw, sw, padding)
    padded = (x4.shape[0], x4.shape[1] + pt + pb, x4.shape[2] + pl + pr, x4.shape[3])
    return oh, ow, pt, pl, padded


def _pool_geometry(in_size: int, win: int, stride: int) -> int:
    if win > in_size:
        raise ValueError(f"pool window {win} exceeds input size {in_size}")
    return (in_size - win) // stride + 1


def maxpool2d(x: np.ndarray, window: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """Floor-mode max pooling: incomplete trailing windows are dropped."""
    x4, squeezed = _as_batch(x, 4)
    ph, pw = window
    sh, sw = stride
    oh = _pool_geometry(x4.shape[1], ph, sh)
    ow = _pool_geometry(x4.shape[2], pw, sw)
    win = _windows(x4, ph, pw, sh, sw, oh, ow)
    return _unbatch(win.max(axis=(3, 4)), squeezed)


def maxpool2d_backward(
    dout: np.ndarray,
    x: np.ndarray,
    window: tuple[int, int],
    stride: tuple[int, int],
) -> np.ndarray:
    """Route dout to the first (row-major) argmax cell of each window."""
    x4, squeezed = _as_batch(x, 4)
    d4, _ = _as_batch(dout, 4)
    n, h, w_in, c = x4.shape
    ph, pw = window
    sh, sw = stride
    oh = _pool_geometry(h, ph, sh)
    ow = _pool_geometry(w_in, pw, sw)
    flat = _windows(x4, ph, pw, sh, sw, oh, ow).reshape(n, oh, ow, ph * pw, c)
    best = flat.argmax(axis=3)  # first argmax in row-major window order
    routed = np.zeros(flat.shape, dtype=d4.dtype)
    np.put_along_axis(routed, best[:, :, :, None, :], d4[:, :, :, None, :], axis=3)

    if (sh, sw) == (ph, pw):
        # non-overlapping fast path: rearrange window cells back into the grid
        dx = np.zeros_like(x4)
        block = routed.reshape(n, oh, ow, ph, pw, c).transpose(0, 1, 3, 2, 4, 5)
        dx[:, :oh * ph, :ow * pw, :] = block.reshape(n, oh * ph, ow * pw, c)
        return _unbatch(dx, squeezed)

    dx = np.zeros_like(x4)
    cell = np.arange(ph * pw)
    rows = (sh * np.arange(oh))[:, None, None] + (cell // pw)[None, None, :]
    cols = (sw * np.arange(ow))[None, :, None] + (cell % pw)[None, None, :]
    ni = np.arange(n)[:, None, None, None, None]
    ci = np.arange(c)[None, None, None, None, :]
    np.add.at(dx, (ni, rows[None, ..., None], cols[None, ..., None], ci), routed)
    return _unbatch(dx, squeezed)


def mfm_halves(x: np.ndarray) -> np.ndarray:
    """Elementwise max over the two halves of the channel axis (2k -> k)."""
    x = np.asarray(x)
    c = x.shape[-1]
    if c % 2 != 0:
        raise ValueError(f"channel count must be even, got {c}")
    k = c // 2
    return np.maximum(x[..., :k], x[..., k:])


def mfm_halves_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    k = x.shape[-1] // 2
    take_first = x[..., :k] >= x[..., k:]
    dx = np.empty_like(x)
    np.multiply(dout, take_first, out=dx[..., :k])
    np.logical_not(take_first, out=take_first)
    np.multiply(dout, take_first, out=dx[..., k:])
    return dx


def _mfm_thirds_indices(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c = x.shape[-1]
    if c % 3 != 0:
        raise ValueError(f"channel count must be divisible by 3, got {c}")
    k = c // 3
    groups = np.stack([x[..., :k], x[..., k:2 * k], x[..., 2 * k:]], axis=0)
    imax = groups.argmax(axis=0)
    imin = groups.argmin(axis=0)
    # the median group is the one that is neither first-max nor first-min;
    # when all three agree the middle group stands in
    imed = np.where(imax == imin, 1, 3 - imax - imin)
    return groups, imax, imed


def mfm_thirds(x: np.ndarray) -> np.ndarray:
    """Split channels into three groups of k; emit [max, median] (3k -> 2k)."""
    x = np.asarray(x)
    groups, imax, imed = _mfm_thirds_indices(x)
    mx = np.take_along_axis(groups, imax[None], axis=0)[0]
    med = np.take_along_axis(groups, imed[None], axis=0)[0]
    return np.concatenate([mx, med], axis=-1)


def mfm_thirds_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    _, imax, imed = _mfm_thirds_indices(x)
    k = x.shape[-1] // 3
    dmax, dmed = dout[..., :k], dout[..., k:]
    parts = [dmax * (imax == g) + dmed * (imed == g) for g in range(3)]
    return np.concatenate(parts, axis=-1)


def fully_connected(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map x @ w + b with w of shape (n_in, n_out)."""
    x = np.asarray(x)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b


def fully_connected_backward(
    dout: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.asarray(x)
    dout = np.asarray(dout)
    if x.ndim == 1:
        return dout @ w.T, np.outer(x, dout), dout.copy()
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability rate, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout(x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverted dropout; the identity outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    return x * dropout_mask(x.shape, rate, rng, dtype=x.dtype)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy of softmax(logits) against an integer class target.

    For (c,) logits and a scalar target returns (scalar loss, (c,) grad); for
    (N, c) logits and (N,) targets returns per-sample losses and grads.
    The gradient is softmax(logits) - onehot(target).
    """
    z = np.asarray(logits)
    if z.ndim == 1:
        loss, grad = softmax_cross_entropy(z[None], np.asarray([target]))
        return loss[0], grad[0]
    targets = np.asarray(target)
    c = z.shape[-1]
    if targets.min() < 0 or targets.max() >= c:
        raise ValueError(f"target out of range for {c} classes: {targets}")
    shifted = z - z.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(z.shape[0])
    loss = log_norm - shifted[rows, targets]
    grad = softmax(z)
    grad[rows, targets] -= 1.0
    return loss, grad


@dataclass
class AdamState:
    """First/second moment buffers plus hyperparameters for Adam."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def grad_check(fn, arrays: list[np.ndarray], h: float = 1e-5, coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn(*arrays)`` must return ``(loss, grads)`` with one gradient per input
    array (None to skip an input).  Arrays are perturbed in place one
    coordinate at a time; pass float64 arrays for meaningful tolerances.
    When ``coords`` is given, that many coordinates per array are sampled
    with ``rng`` instead of sweeping all of them.

    The per-coordinate error is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8).
    """
    _, grads = fn(*arrays)
    worst = 0.0
    for arr, grad in zip(arrays, grads):
        if grad is None:
            continue
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        if coords is not None and coords < flat.size:
            if rng is None:
                rng = np.random.default_rng(0)
            picks = rng.choice(flat.size, size=coords, replace=False)
        else:
            picks = range(flat.size)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = fn(*arrays)[0]
            flat[i] = orig - h
            loss_minus = fn(*arrays)[0]
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            analytic = gflat[i]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
