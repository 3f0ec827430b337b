"""Light CNN spoofing detector with four classification heads.

A stack of convolution + max-feature-map blocks with max pooling shrinks a
log-power spectrogram to a small grid, two FC+MFM stages compress it to an
embedding, and four parallel affine heads classify spoof/genuine (2),
recording environment (4+1), playback device (8+1), and recording device
(7+1); the extra node of each noise head fires for genuine input.  The
pre-activation output of the last hidden layer is the "code" consumed by
the Gaussian scoring back-end.

All pooling uses floor mode (incomplete trailing windows dropped), and all
convolutions are stride-1 with same padding.  The default geometry takes
400x257 inputs and emits a 128-dim code; ``width_divisor`` scales every
channel and FC width down for fast desk-scale runs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import nn
from .channel import LabeledUtterance
from .evaluation import TrialSet, compute_eer

HEADS = ("spoof", "env", "playback", "recorder")
HEAD_SIZES = {"spoof": 2, "env": 5, "playback": 9, "recorder": 8}

INPUT_DROPOUT = 0.2
HIDDEN_DROPOUT = 0.7

# (layer name, kernel size, output channels at width_divisor 1,
#  feature-map reduction, pooling window/stride after the block or None)
_CONV_PLAN = [
    ("conv1", 5, 32, "halves", (2, 2)),
    ("conv2a", 1, 32, "halves", None),
    ("conv2b", 3, 48, "halves", (2, 2)),
    ("conv3a", 1, 48, "thirds", None),
    ("conv3b", 3, 64, "halves", (2, 1)),
    ("conv4a", 1, 64, "halves", None),
    ("conv4b", 3, 32, "halves", (2, 1)),
    ("conv5a", 1, 32, "halves", None),
    ("conv5b", 3, 32, "halves", (2, 2)),
]
_FC_UNITS = 128


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 20
    seed: int = 0
    input_frames: int = 400
    input_bins: int = 257
    width_divisor: int = 1
    patience: int = 5


class Architecture:
    """Layer plan plus the exact shape trace for a given input geometry."""

    def __init__(self, input_frames: int = 400, input_bins: int = 257, width_divisor: int = 1):
        if width_divisor not in (1, 2, 4):
            raise ValueError(f"width_divisor must be 1, 2, or 4, got {width_divisor}")
        self.input_frames = input_frames
        self.input_bins = input_bins
        self.width_divisor = width_divisor

        d = width_divisor
        self.conv_channels = {name: base // d for name, _, base, _, _ in _CONV_PLAN}
        self.fc_units = _FC_UNITS // d
        self.code_dim = self.fc_units

        trace: list[tuple[str, tuple[int, ...]]] = [("input", (input_frames, input_bins, 1))]
        h, w, c = input_frames, input_bins, 1
        self._param_shapes: dict[str, tuple[int, ...]] = {}
        for name, k, base, mfm, pool in _CONV_PLAN:
            cout = base // d
            self._param_shapes[f"{name}_w"] = (k, k, c, cout)
            self._param_shapes[f"{name}_b"] = (cout,)
            c = cout
            trace.append((name, (h, w, c)))
            if mfm == "halves":
                if c % 2:
                    raise ValueError(f"{name}: channel count {c} not even")
                c //= 2
            else:
                if c % 3:
                    raise ValueError(f"{name}: channel count {c} not divisible by 3")
                c = 2 * (c // 3)
            trace.append((f"{name}_mfm", (h, w, c)))
            if pool is not None:
                ph, pw = pool
                if ph > h or pw > w:
                    raise ValueError(
                        f"input {input_frames}x{input_bins} too small: pool after {name} "
                        f"sees {h}x{w}, needs at least {ph}x{pw}"
                    )
                h = (h - ph) // ph + 1
                w = (w - pw) // pw + 1
                trace.append((f"{name}_pool", (h, w, c)))

        self.flat_dim = h * w * c
        trace.append(("flatten", (self.flat_dim,)))
        self._param_shapes["fc6_w"] = (self.flat_dim, self.fc_units)
        self._param_shapes["fc6_b"] = (self.fc_units,)
        trace.append(("fc6", (self.fc_units,)))
        trace.append(("fc6_mfm", (self.fc_units // 2,)))
        self._param_shapes["fc7_w"] = (self.fc_units // 2, self.fc_units)
        self._param_shapes["fc7_b"] = (self.fc_units,)
        trace.append(("fc7", (self.fc_units,)))
        trace.append(("fc7_mfm", (self.fc_units // 2,)))
        for head in HEADS:
            self._param_shapes[f"fc_{head}_w"] = (self.fc_units // 2, HEAD_SIZES[head])
            self._param_shapes[f"fc_{head}_b"] = (HEAD_SIZES[head],)
            trace.append((f"fc_{head}", (HEAD_SIZES[head],)))
        self.trace = trace

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Architecture":
        return cls(cfg.input_frames, cfg.input_bins, cfg.width_divisor)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._param_shapes)

    def shape_trace(self) -> list[tuple[str, tuple[int, ...]]]:
        return list(self.trace)


def build_lcnn(seed: int, arch: Architecture | None = None, dtype=np.float32) -> dict[str, np.ndarray]:
    """Allocate parameters: fan-in-scaled uniform weights, zero biases."""
    arch = arch or Architecture()
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def _check_shape(stage: str, got: tuple[int, ...], expected: tuple[int, ...]) -> None:
    if tuple(got) != tuple(expected):
        raise AssertionError(f"shape mismatch at {stage}: got {got}, expected {expected}")


def forward_batch(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    arch: Architecture,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run a (N, frames, bins) batch; returns (logits dict, codes, tape).

    Every intermediate shape is asserted against the architecture trace.
    The tape holds the saved inputs needed by :func:`backward_batch`.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected (batch, frames, bins) input, got shape {x.shape}")
    if training and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")

    a = x[..., None]
    it = iter(arch.trace)
    stage, shape = next(it)
    _check_shape(stage, a.shape[1:], shape)

    tape: list[tuple] = []
    if training and INPUT_DROPOUT > 0.0:
        mask = nn.dropout_mask(a.shape, INPUT_DROPOUT, rng, dtype=a.dtype)
        a = a * mask
        tape.append(("drop", mask))

    for name, _, _, mfm, pool in _CONV_PLAN:
        w, b = params[f"{name}_w"], params[f"{name}_b"]
        x_in = a
        a, cols = nn.conv2d(a, w, b, return_cols=True)
        tape.append(("conv", name, x_in, cols))
        stage, shape = next(it)
        _check_shape(stage, a.shape[1:], shape)
        if mfm == "halves":
            tape.append(("mfm2", a))
            a = nn.mfm_halves(a)
        else:
            tape.append(("mfm3", a))
            a = nn.mfm_thirds(a)
        stage, shape = next(it)
        _check_shape(stage, a.shape[1:], shape)
        if pool is not None:
            tape.append(("pool", a, pool))
            a = nn.maxpool2d(a, pool, pool)
            stage, shape = next(it)
            _check_shape(stage, a.shape[1:], shape)

    n = a.shape[0]
    tape.append(("flatten", a.shape))
    a = a.reshape(n, -1)
    stage, shape = next(it)
    _check_shape(stage, a.shape[1:], shape)

    if training and HIDDEN_DROPOUT > 0.0:
        mask = nn.dropout_mask(a.shape, HIDDEN_DROPOUT, rng, dtype=a.dtype)
        a = a * mask
        tape.append(("drop", mask))

    tape.append(("fc", "fc6", a))
    a = nn.fully_connected(a, params["fc6_w"], params["fc6_b"])
    stage, shape = next(it)
    _check_shape(stage, a.shape[1:], shape)
    tape.append(("mfm2", a))
    a = nn.mfm_halves(a)
    stage, shape = next(it)
    _check_shape(stage, a.shape[1:], shape)

    tape.append(("fc", "fc7", a))
    a = nn.fully_connected(a, params["fc7_w"], params["fc7_b"])
    stage, shape = next(it)
    _check_shape(stage, a.shape[1:], shape)
    codes = a
    tape.append(("mfm2", a))
    a = nn.mfm_halves(a)
    stage, shape = next(it)
    _check_shape(stage, a.shape[1:], shape)

    head_input = a
    logits: dict[str, np.ndarray] = {}
    for head in HEADS:
        logits[head] = nn.fully_connected(head_input, params[f"fc_{head}_w"], params[f"fc_{head}_b"])
        stage, shape = next(it)
        _check_shape(stage, logits[head].shape[1:], shape)
    tape.append(("heads", head_input))
    return logits, codes, tape


def backward_batch(
    params: dict[str, np.ndarray],
    tape: list[tuple],
    dlogits: dict[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Backpropagate head-logit gradients through the tape; returns dL/dparam."""
    grads: dict[str, np.ndarray] = {}
    kind = tape[-1][0]
    if kind != "heads":
        raise ValueError("tape does not end at the heads")
    head_input = tape[-1][1]
    d = np.zeros_like(head_input)
    for head in HEADS:
        dx, dw, db = nn.fully_connected_backward(dlogits[head], head_input, params[f"fc_{head}_w"])
        grads[f"fc_{head}_w"] = dw
        grads[f"fc_{head}_b"] = db
        d = d + dx

    for entry in reversed(tape[:-1]):
        op = entry[0]
        if op == "fc":
            _, name, x_in = entry
            d, dw, db = nn.fully_connected_backward(d, x_in, params[f"{name}_w"])
            grads[f"{name}_w"] = dw
            grads[f"{name}_b"] = db
        elif op == "mfm2":
            d = nn.mfm_halves_backward(d, entry[1])
        elif op == "mfm3":
            d = nn.mfm_thirds_backward(d, entry[1])
        elif op == "pool":
            _, x_in, pool = entry
            d = nn.maxpool2d_backward(d, x_in, pool, pool)
        elif op == "flatten":
            d = d.reshape(entry[1])
        elif op == "conv":
            _, name, x_in, cols = entry
            d, dw, db = nn.conv2d_backward(d, x_in, params[f"{name}_w"], cols=cols)
            grads[f"{name}_w"] = dw
            grads[f"{name}_b"] = db
        elif op == "drop":
            d = d * entry[1]
        else:
            raise ValueError(f"unknown tape entry {op!r}")
    return grads


def forward(
    params: dict[str, np.ndarray],
    spec: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
    arch: Architecture | None = None,
):
    """Single-utterance forward pass.

    Returns (logits_spoof, logits_env, logits_playback, logits_recorder,
    code); dropout is inert outside training.
    """
    arch = arch or Architecture()
    logits, codes, _ = forward_batch(params, np.asarray(spec)[None], arch, training, rng)
    return (
        logits["spoof"][0],
        logits["env"][0],
        logits["playback"][0],
        logits["recorder"][0],
        codes[0],
    )


def extract_code(params: dict[str, np.ndarray], spec: np.ndarray,
                 arch: Architecture | None = None) -> np.ndarray:
    """Embedding for the scoring back-end: the last hidden affine output."""
    return forward(params, spec, training=False, arch=arch)[4]


def labels_to_targets(u: LabeledUtterance) -> tuple[int, int, int, int]:
    """Map manifest labels to the four head targets.

    Genuine rows hit the trailing genuine node of each noise head.
    """
    u.validate()
    spoof_target = 0 if u.spoof == "genuine" else 1
    return spoof_target, u.env_label, u.playback_label, u.recorder_label


def multitask_loss(
    logits,
    targets,
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
):
    """Weighted sum of the four head cross-entropies.

    ``logits`` is a (spoof, env, playback, recorder) tuple; with 1-D logits
    the loss is a scalar, with (N, c) logits it is per-sample.  Returns the
    loss and the per-head logit gradients (already weight-scaled).
    """
    if len(logits) != 4 or len(targets) != 4:
        raise ValueError("expected four heads of logits and targets")
    total = 0.0
    grads = []
    for z, t, w in zip(logits, targets, weights):
        loss, grad = nn.softmax_cross_entropy(z, t)
        total = total + w * loss
        grads.append(w * grad)
    return total, tuple(grads)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    dev_accuracy: dict[str, float]
    dev_eer_pct: float


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log_lines: list[str]
    history: list[EpochStats]
    best_epoch: int


def _dev_scores(params, arch, dev_x):
    logits, _, _ = forward_batch(params, dev_x, arch, training=False)
    return logits


def train(
    rows: list[LabeledUtterance],
    cfg: TrainConfig,
    feature_loader,
    loss_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
) -> TrainResult:
    """Train on the manifest's train subset, tracking dev metrics per epoch.

    ``feature_loader(utterance_id)`` must return the fixed-size normalized
    spectrogram.  Batches are seeded-shuffled per epoch; gradients are
    averaged over the batch and applied with one Adam step.  Training stops
    early when the dev EER (spoof-head logit difference) has not improved
    for ``cfg.patience`` epochs, and the best-epoch parameters are kept.
    """
    train_rows = [u for u in rows if u.subset == "train"]
    dev_rows = [u for u in rows if u.subset == "dev"]
    if not any(u.spoof == "genuine" for u in train_rows) or not any(
        u.spoof == "spoofed" for u in train_rows
    ):
        raise ValueError("train subset needs both genuine and spoofed utterances")
    if not dev_rows:
        raise ValueError("dev subset is empty")

    arch = Architecture.from_config(cfg)
    expect = (cfg.input_frames, cfg.input_bins)

    def load(u: LabeledUtterance) -> np.ndarray:
        feat = np.asarray(feature_loader(u.id), dtype=np.float32)
        if feat.shape != expect:
            raise ValueError(f"feature {u.id} has shape {feat.shape}, expected {expect}")
        return feat

    train_x = np.stack([load(u) for u in train_rows])
    train_t = np.array([labels_to_targets(u) for u in train_rows])  # (n, 4)
    dev_x = np.stack([load(u) for u in dev_rows])
    dev_t = np.array([labels_to_targets(u) for u in dev_rows])
    dev_genuine = dev_t[:, 0] == 0

    params = build_lcnn(cfg.seed, arch)
    state = nn.AdamState(lr=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 777)))

    log_lines: list[str] = []
    history: list[EpochStats] = []
    best_eer = np.inf
    best_epoch = 0
    best_params = copy.deepcopy(params)
    n = len(train_rows)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            xb = train_x[batch]
            tb = train_t[batch]
            logits, _, tape = forward_batch(params, xb, arch, training=True, rng=rng)
            loss_vec, head_grads = multitask_loss(
                tuple(logits[h] for h in HEADS),
                tuple(tb[:, i] for i in range(4)),
                loss_weights,
            )
            batch_loss = float(np.mean(loss_vec))
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite loss {batch_loss} at epoch {epoch}, "
                    f"batch starting at sample {start}"
                )
            losses.append(batch_loss)
            dlogits = {h: g / len(batch) for h, g in zip(HEADS, head_grads)}
            grads = backward_batch(params, tape, dlogits)
            nn.adam_step(params, grads, state)

        dev_logits = _dev_scores(params, arch, dev_x)
        acc = {}
        for i, head in enumerate(HEADS):
            acc[head] = float(np.mean(dev_logits[head].argmax(axis=1) == dev_t[:, i]))
        spoof_llr = dev_logits["spoof"][:, 0] - dev_logits["spoof"][:, 1]
        trials = TrialSet(
            ids=[u.id for u in dev_rows],
            scores=spoof_llr.astype(np.float64),
            is_genuine=dev_genuine,
        )
        dev_eer = compute_eer(trials)

        mean_loss = float(np.mean(losses))
        log_lines.append(
            f"epoch={epoch} loss={mean_loss:.6f} "
            f"acc_S={acc['spoof']:.4f} acc_E={acc['env']:.4f} "
            f"acc_P={acc['playback']:.4f} acc_R={acc['recorder']:.4f}"
        )
        history.append(EpochStats(epoch, mean_loss, acc, dev_eer))

        if dev_eer < best_eer - 1e-12:
            best_eer = dev_eer
            best_epoch = epoch
            best_params = copy.deepcopy(params)
        elif epoch - best_epoch >= cfg.patience:
            break

    return TrainResult(best_params, log_lines, history, best_epoch)
