"""Synthetic replay-channel corpus.

A genuine recording is a speech-like source convolved with a mild internal
recording channel.  A replayed (spoofed) copy additionally passes through a
playback device, a room, and a re-recording device, each modeled as a
linear impulse response:

    genuine  = source * internal
    spoofed  = genuine * playback * environment * recorder

Each of the three replay stages comes in a fixed set of classes with
disjoint parameter ranges, so the class identity is recoverable from the
signal's spectrum:

* playback: low-pass with a class-specific cutoff band plus a gentle
  resonance below the knee (small speakers vs. studio monitors);
* environment: exponentially decaying reverberation, class-specific decay
  time and early-reflection pattern (booth vs. hall);
* recorder: spectral tilt at a class-specific slope plus a low-frequency
  roll-off (cheap electret vs. studio microphone);
* internal: near-delta with a faint random ripple, present in every
  recording.

The ``instance_seed`` jitters parameters inside the class range, standing
in for distinct physical devices of the same product class.  Evaluation
utterances draw instance seeds disjoint from train/dev (even vs. odd), so
scoring is always against unseen devices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, firwin2

from .dsp import DEFAULT_SAMPLE_RATE, Waveform, write_wav

KIND_INTERNAL = "internal_noise"
KIND_PLAYBACK = "playback"
KIND_ENVIRONMENT = "environment"
KIND_RECORDER = "recorder"

CLASS_COUNTS = {
    KIND_INTERNAL: 1,
    KIND_PLAYBACK: 8,
    KIND_ENVIRONMENT: 4,
    KIND_RECORDER: 7,
}

# genuine signals map to one extra "genuine" node appended to each task
GENUINE_ENV = CLASS_COUNTS[KIND_ENVIRONMENT]
GENUINE_PLAYBACK = CLASS_COUNTS[KIND_PLAYBACK]
GENUINE_RECORDER = CLASS_COUNTS[KIND_RECORDER]

PEAK_LEVEL = 0.9  # every channel output is re-normalized to this peak

# playback low-pass: class c cutoff is drawn near 1200 + 800c Hz; the
# asserted class band is +/- 300 Hz, leaving a 200 Hz gap between classes
_PLAYBACK_CENTER_HZ = [1200 + 800 * c for c in range(8)]
_PLAYBACK_JITTER_HZ = 150.0
PLAYBACK_CUTOFF_BANDS = [(c - 300.0, c + 300.0) for c in _PLAYBACK_CENTER_HZ]

# environment reverberation decay constants (exponential tail), in ms
_ENV_DECAY_MS = [(3.5, 6.5), (10.0, 15.0), (22.0, 30.0), (45.0, 60.0)]

# recorder spectral tilt in dB/octave around 1 kHz, plus low-frequency cut
_RECORDER_TILT_DB_OCT = [-4.5, -3.0, -1.5, 0.0, 1.5, 3.0, 4.5]
_RECORDER_TILT_JITTER = 0.4
_RECORDER_HP_HZ = [60 + 35 * c for c in range(7)]

INTERNAL_TAPS = 16
REPLAY_FIR_TAPS = 127     # playback and recorder, <= 128
ENVIRONMENT_TAPS = 1600   # 100 ms at 16 kHz

_SEED_TAG_SOURCE = 101
_SEED_TAG_IR = 202
_SEED_TAG_POOL = 303
_SEED_TAG_UTT = 404


@dataclass
class ImpulseResponse:
    """FIR channel: taps plus the (kind, class, instance) that produced it."""

    taps: np.ndarray
    kind: str
    class_id: int
    instance_seed: int

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1 or self.taps.size == 0:
            raise ValueError("impulse response taps must be a non-empty 1-D sequence")
        if not np.isfinite(self.taps).all():
            raise ValueError("impulse response taps must be finite")
        if not np.any(self.taps != 0.0):
            raise ValueError("impulse response needs at least one nonzero tap")
        if self.kind not in CLASS_COUNTS:
            raise ValueError(f"unknown impulse response kind {self.kind!r}")
        if not 0 <= self.class_id < CLASS_COUNTS[self.kind]:
            raise ValueError(
                f"class_id {self.class_id} out of range for kind {self.kind!r} "
                f"(must be < {CLASS_COUNTS[self.kind]})"
            )


@dataclass
class ChannelDraw:
    """Concrete channel instances used to render one utterance."""

    internal_seed: int
    playback_class: int | None = None
    playback_seed: int | None = None
    env_class: int | None = None
    env_seed: int | None = None
    recorder_class: int | None = None
    recorder_seed: int | None = None


@dataclass
class LabeledUtterance:
    """One manifest row: audio path plus the four task labels."""

    id: str
    path: str
    subset: str
    spoof: str
    env_label: int
    playback_label: int
    recorder_label: int
    channel: ChannelDraw | None = None

    def validate(self) -> None:
        if self.subset not in ("train", "dev", "eval"):
            raise ValueError(f"bad subset {self.subset!r} for {self.id}")
        genuine_labels = (
            self.env_label == GENUINE_ENV
            and self.playback_label == GENUINE_PLAYBACK
            and self.recorder_label == GENUINE_RECORDER
        )
        spoofed_labels = (
            0 <= self.env_label < GENUINE_ENV
            and 0 <= self.playback_label < GENUINE_PLAYBACK
            and 0 <= self.recorder_label < GENUINE_RECORDER
        )
        if self.spoof == "genuine" and not genuine_labels:
            raise ValueError(f"genuine utterance {self.id} must carry the genuine-node labels")
        if self.spoof == "spoofed" and not spoofed_labels:
            raise ValueError(f"spoofed utterance {self.id} must carry in-range class labels")
        if self.spoof not in ("genuine", "spoofed"):
            raise ValueError(f"bad spoof value {self.spoof!r} for {self.id}")


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy))


def synth_source(seed: int, duration_s: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Speech-like test signal: drifting harmonic stack, syllabic amplitude
    modulation, and low-level broadband noise.  Deterministic per seed;
    peak-normalized to 0.9."""
    if not 1.0 <= duration_s <= 10.0:
        raise ValueError(f"duration must be within [1, 10] s, got {duration_s}")
    rng = _rng(_SEED_TAG_SOURCE, seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    f0_base = rng.uniform(95.0, 255.0)
    drift = (
        0.12 * np.sin(2 * np.pi * rng.uniform(0.2, 0.8) * t + rng.uniform(0, 2 * np.pi))
        + 0.06 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
    )
    f0 = np.clip(f0_base * (1.0 + drift), 80.0, 300.0)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    voiced = np.zeros(n)
    for k in range(1, 13):  # 12 partials, all below 3.6 kHz
        amp = k ** -1.2 * (1.0 + 0.3 * rng.uniform(-1, 1))
        voiced += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    syllable_rate = rng.uniform(2.0, 8.0)
    raised = 0.5 + 0.5 * np.sin(2 * np.pi * syllable_rate * t + rng.uniform(0, 2 * np.pi))
    envelope = 0.35 + 0.65 * raised ** rng.uniform(1.0, 2.0)
    shaped = voiced * envelope

    snr_db = rng.uniform(22.0, 32.0)
    noise_rms = np.sqrt(np.mean(shaped ** 2)) * 10 ** (-snr_db / 20.0)
    x = shaped + noise_rms * rng.standard_normal(n)
    x *= PEAK_LEVEL / np.max(np.abs(x))
    return Waveform(x, sample_rate)


def _fir_from_magnitude(freqs_hz: np.ndarray, gains: np.ndarray, ntaps: int,
                        sample_rate: int) -> np.ndarray:
    nyq = sample_rate / 2.0
    return firwin2(ntaps, freqs_hz / nyq, gains, window="hamming")


def _make_internal(rng: np.random.Generator) -> np.ndarray:
    taps = np.zeros(INTERNAL_TAPS)
    taps[0] = 1.0
    tail = rng.standard_normal(INTERNAL_TAPS - 1) * np.exp(-np.arange(INTERNAL_TAPS - 1) / 4.0)
    energy = rng.uniform(0.004, 0.04)
    tail *= np.sqrt(energy / np.sum(tail ** 2))
    taps[1:] = tail
    return taps


def _make_playback(class_id: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    cutoff = _PLAYBACK_CENTER_HZ[class_id] + rng.uniform(-1, 1) * _PLAYBACK_JITTER_HZ
    res_freq = cutoff * rng.uniform(0.30, 0.50)
    res_gain = rng.uniform(0.06, 0.19)  # 0.5 to 1.5 dB bump
    res_width = 0.08 * cutoff
    freqs = np.linspace(0.0, sample_rate / 2.0, 513)
    rolloff = 1.0 / np.sqrt(1.0 + (freqs / cutoff) ** 8)  # 4th-order knee
    bump = 1.0 + res_gain * np.exp(-(((freqs - res_freq) / res_width) ** 2))
    return _fir_from_magnitude(freqs, rolloff * bump, REPLAY_FIR_TAPS, sample_rate)


def _make_environment(class_id: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    taps = np.zeros(ENVIRONMENT_TAPS)
    taps[0] = 1.0
    lo, hi = _ENV_DECAY_MS[class_id]
    decay_samples = rng.uniform(lo, hi) * 1e-3 * sample_rate

    n_reflections = 2 + class_id
    delay_ms = rng.uniform(1.5 + 2.0 * class_id, 3.0 + 2.0 * class_id)
    for r in range(n_reflections):
        pos = int(round(delay_ms * 1e-3 * sample_rate))
        if pos >= ENVIRONMENT_TAPS:
            break
        taps[pos] += rng.uniform(0.25, 0.55) * (0.75 ** r) * rng.choice([-1.0, 1.0])
        delay_ms += rng.uniform(1.0, 3.0)

    t = np.arange(ENVIRONMENT_TAPS)
    tail = rng.standard_normal(ENVIRONMENT_TAPS) * np.exp(-t / decay_samples)
    tail[0] = 0.0
    taps += rng.uniform(0.25, 0.45) * tail
    return taps


def _make_recorder(class_id: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    tilt = _RECORDER_TILT_DB_OCT[class_id] + rng.uniform(-1, 1) * _RECORDER_TILT_JITTER
    hp_cut = _RECORDER_HP_HZ[class_id] + rng.uniform(-10.0, 10.0)
    freqs = np.linspace(0.0, sample_rate / 2.0, 513)
    safe = np.maximum(freqs, 40.0)
    gains = 10.0 ** (tilt * np.log2(safe / 1000.0) / 20.0)
    gains /= np.sqrt(1.0 + (hp_cut / np.maximum(freqs, 1.0)) ** 4)
    gains[0] = 0.0
    return _fir_from_magnitude(freqs, gains, REPLAY_FIR_TAPS, sample_rate)


def make_ir(kind: str, class_id: int, instance_seed: int,
            sample_rate: int = DEFAULT_SAMPLE_RATE) -> ImpulseResponse:
    """Deterministic impulse response for one device instance of a class."""
    if kind not in CLASS_COUNTS:
        raise ValueError(f"unknown impulse response kind {kind!r}")
    if not 0 <= class_id < CLASS_COUNTS[kind]:
        raise ValueError(f"class_id {class_id} out of range for kind {kind!r}")
    kind_code = list(CLASS_COUNTS).index(kind)
    rng = _rng(_SEED_TAG_IR, kind_code, class_id, instance_seed)
    if kind == KIND_INTERNAL:
        taps = _make_internal(rng)
    elif kind == KIND_PLAYBACK:
        taps = _make_playback(class_id, rng, sample_rate)
    elif kind == KIND_ENVIRONMENT:
        taps = _make_environment(class_id, rng, sample_rate)
    else:
        taps = _make_recorder(class_id, rng, sample_rate)
    return ImpulseResponse(taps, kind, class_id, instance_seed)


def convolve(x: Waveform, h: ImpulseResponse) -> Waveform:
    """Full linear convolution (FFT-based), length len(x) + len(h) - 1."""
    out = fftconvolve(x.samples, h.taps, mode="full")
    return Waveform(out, x.sample_rate)


def _peak_normalize(w: Waveform) -> Waveform:
    peak = np.max(np.abs(w.samples))
    if peak == 0.0:
        raise ValueError("cannot peak-normalize an all-zero signal")
    return Waveform(w.samples * (PEAK_LEVEL / peak), w.sample_rate)


def make_genuine(x: Waveform, n: ImpulseResponse) -> Waveform:
    """Source through the internal recording channel, peak-normalized."""
    if n.kind != KIND_INTERNAL:
        raise ValueError(f"genuine channel must be {KIND_INTERNAL!r}, got {n.kind!r}")
    return _peak_normalize(convolve(x, n))


def make_spoofed(
    y_genuine: Waveform,
    p: ImpulseResponse,
    e: ImpulseResponse,
    r: ImpulseResponse,
) -> Waveform:
    """Genuine signal through playback, environment, recorder; peak-normalized."""
    expected = (KIND_PLAYBACK, KIND_ENVIRONMENT, KIND_RECORDER)
    got = (p.kind, e.kind, r.kind)
    if got != expected:
        raise ValueError(f"spoofing cascade kinds must be {expected}, got {got}")
    out = convolve(convolve(convolve(y_genuine, p), e), r)
    return _peak_normalize(out)


@dataclass
class CorpusConfig:
    """Counts per (subset, class) plus rendering knobs for corpus synthesis."""

    out_dir: str | Path
    n_train_genuine: int = 150
    n_train_spoofed: int = 150
    n_dev_genuine: int = 50
    n_dev_spoofed: int = 50
    n_eval_genuine: int = 60
    n_eval_spoofed: int = 540
    duration_range: tuple[float, float] = (1.5, 3.5)
    train_instances_per_class: int = 4
    eval_instances_per_class: int = 2
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def count(self, subset: str, label: str) -> int:
        return getattr(self, f"n_{subset}_{label}")


MANIFEST_COLUMNS = ["id", "path", "subset", "spoof", "env_label", "playback_label", "recorder_label"]


def write_manifest(path: str | Path, rows: list[LabeledUtterance]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for u in rows:
            writer.writerow(
                [u.id, u.path, u.subset, u.spoof, u.env_label, u.playback_label, u.recorder_label]
            )


def read_manifest(path: str | Path) -> list[LabeledUtterance]:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_COLUMNS:
            raise ValueError(f"unexpected manifest columns {reader.fieldnames} in {path}")
        for rec in reader:
            u = LabeledUtterance(
                id=rec["id"],
                path=rec["path"],
                subset=rec["subset"],
                spoof=rec["spoof"],
                env_label=int(rec["env_label"]),
                playback_label=int(rec["playback_label"]),
                recorder_label=int(rec["recorder_label"]),
            )
            u.validate()
            rows.append(u)
    return rows


def _instance_pools(seed: int, cfg: CorpusConfig) -> dict:
    """Per (kind, class) device-instance seeds.

    Train/dev share even seeds; eval gets odd ones, so evaluation channels
    are provably unseen during training.
    """
    rng = _rng(_SEED_TAG_POOL, seed)
    pools = {}
    for kind in (KIND_PLAYBACK, KIND_ENVIRONMENT, KIND_RECORDER):
        for class_id in range(CLASS_COUNTS[kind]):
            train = 2 * rng.integers(0, 2 ** 30, size=cfg.train_instances_per_class)
            evals = 2 * rng.integers(0, 2 ** 30, size=cfg.eval_instances_per_class) + 1
            pools[(kind, class_id, "train")] = [int(v) for v in train]
            pools[(kind, class_id, "eval")] = [int(v) for v in evals]
    return pools


def build_corpus(cfg: CorpusConfig, seed: int) -> list[LabeledUtterance]:
    """Render WAV files plus ``manifest.csv`` under ``cfg.out_dir``.

    Every utterance gets a fresh synthetic source; spoofed utterances draw
    their (environment, playback, recorder) class triple uniformly.  The
    returned records keep the concrete channel draw in ``channel`` (the CSV
    holds only the label columns).  Fully deterministic in (cfg, seed).
    """
    for subset in ("train", "dev", "eval"):
        for label in ("genuine", "spoofed"):
            if cfg.count(subset, label) < 1:
                raise ValueError(f"need at least one {subset}/{label} utterance")
    out_dir = Path(cfg.out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    pools = _instance_pools(seed, cfg)
    rows: list[LabeledUtterance] = []
    utt_index = 0
    for subset in ("train", "dev", "eval"):
        pool_key = "eval" if subset == "eval" else "train"
        for label in ("genuine", "spoofed"):
            for i in range(cfg.count(subset, label)):
                rng = _rng(_SEED_TAG_UTT, seed, utt_index)
                utt_id = f"{subset}_{label}_{i:04d}"
                duration = rng.uniform(*cfg.duration_range)
                source = synth_source(int(rng.integers(2 ** 31)), duration, cfg.sample_rate)
                internal_seed = int(rng.integers(2 ** 31))
                internal = make_ir(KIND_INTERNAL, 0, internal_seed, cfg.sample_rate)
                genuine = make_genuine(source, internal)

                if label == "genuine":
                    audio = genuine
                    draw = ChannelDraw(internal_seed=internal_seed)
                    env_label, pb_label, rec_label = GENUINE_ENV, GENUINE_PLAYBACK, GENUINE_RECORDER
                else:
                    pb_label = int(rng.integers(CLASS_COUNTS[KIND_PLAYBACK]))
                    env_label = int(rng.integers(CLASS_COUNTS[KIND_ENVIRONMENT]))
                    rec_label = int(rng.integers(CLASS_COUNTS[KIND_RECORDER]))
                    pb_pool = pools[(KIND_PLAYBACK, pb_label, pool_key)]
                    env_pool = pools[(KIND_ENVIRONMENT, env_label, pool_key)]
                    rec_pool = pools[(KIND_RECORDER, rec_label, pool_key)]
                    pb_seed = pb_pool[int(rng.integers(len(pb_pool)))]
                    env_seed = env_pool[int(rng.integers(len(env_pool)))]
                    rec_seed = rec_pool[int(rng.integers(len(rec_pool)))]
                    audio = make_spoofed(
                        genuine,
                        make_ir(KIND_PLAYBACK, pb_label, pb_seed, cfg.sample_rate),
                        make_ir(KIND_ENVIRONMENT, env_label, env_seed, cfg.sample_rate),
                        make_ir(KIND_RECORDER, rec_label, rec_seed, cfg.sample_rate),
                    )
                    draw = ChannelDraw(
                        internal_seed=internal_seed,
                        playback_class=pb_label,
                        playback_seed=pb_seed,
                        env_class=env_label,
                        env_seed=env_seed,
                        recorder_class=rec_label,
                        recorder_seed=rec_seed,
                    )

                rel_path = f"wav/{utt_id}.wav"
                write_wav(wav_dir / f"{utt_id}.wav", audio)
                row = LabeledUtterance(
                    id=utt_id,
                    path=rel_path,
                    subset=subset,
                    spoof=label,
                    env_label=env_label,
                    playback_label=pb_label,
                    recorder_label=rec_label,
                    channel=draw,
                )
                row.validate()
                rows.append(row)
                utt_index += 1

    write_manifest(out_dir / "manifest.csv", rows)
    return rows
