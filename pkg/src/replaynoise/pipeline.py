"""End-to-end pipeline: corpus synthesis through EER report.

Stages communicate only through files, so each command can run alone as
long as its upstream artifacts exist:

    synth      corpus WAVs + manifest.csv
    featurize  fixed-size normalized spectrograms (.spec)
    train      checkpoint, training log, per-epoch history (per mode)
    codes      code CSV exports for the train and eval subsets (per mode)
    backend    two-Gaussian scoring model fit on train codes (per mode)
    score      LLR score file over the eval subset (per mode)
    eval       report with config echo, training history, and eval EER
    all        everything above in order

Every stage is deterministic in (config, seeds), so re-running overwrites
byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend as backend_mod
from . import channel, dsp, evaluation, model
from .checkpoint import load_params, save_params

REDUCED_FRAMES = 100
REDUCED_BINS = 129      # every second bin of the 257-bin spectrogram
REDUCED_DIVISOR = 4

COMMANDS = ("synth", "featurize", "train", "codes", "backend", "score", "eval", "all")
MODES = ("multitask", "baseline")

LOSS_WEIGHTS = {
    "multitask": (1.0, 1.0, 1.0, 1.0),
    "baseline": (1.0, 0.0, 0.0, 0.0),
}


class DependencyError(RuntimeError):
    """An upstream artifact required by a stage is missing."""


class ConfigError(ValueError):
    """A pipeline configuration file could not be parsed."""


@dataclass
class PipelineConfig:
    """Flat pipeline settings; every field maps to one `key = value` line."""

    workdir: str = "runs"
    corpus_dir: str | None = None
    features_dir: str | None = None
    checkpoint_dir: str | None = None
    scores_dir: str | None = None
    report_dir: str | None = None

    corpus_seed: int = 7
    featurize_seed: int = 11
    train_seed: int = 1

    mode: str = "multitask"
    reduced: bool = False

    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    patience: int = 5

    n_train_genuine: int = 150
    n_train_spoofed: int = 150
    n_dev_genuine: int = 50
    n_dev_spoofed: int = 50
    n_eval_genuine: int = 60
    n_eval_spoofed: int = 540

    def __post_init__(self):
        if self.mode not in MODES + ("both",):
            raise ConfigError(f"mode must be one of multitask|baseline|both, got {self.mode!r}")
        root = Path(self.workdir)
        self.corpus_dir = str(self.corpus_dir or root / "corpus")
        self.features_dir = str(self.features_dir or root / "features")
        self.checkpoint_dir = str(self.checkpoint_dir or root / "checkpoints")
        self.scores_dir = str(self.scores_dir or root / "scores")
        self.report_dir = str(self.report_dir or root / "reports")

    @property
    def modes(self) -> tuple[str, ...]:
        return MODES if self.mode == "both" else (self.mode,)

    @property
    def input_frames(self) -> int:
        return REDUCED_FRAMES if self.reduced else dsp.TARGET_FRAMES

    @property
    def input_bins(self) -> int:
        return REDUCED_BINS if self.reduced else dsp.N_BINS

    def train_config(self) -> model.TrainConfig:
        return model.TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.train_seed,
            input_frames=self.input_frames,
            input_bins=self.input_bins,
            width_divisor=REDUCED_DIVISOR if self.reduced else 1,
            patience=self.patience,
        )

    def corpus_config(self) -> channel.CorpusConfig:
        return channel.CorpusConfig(
            out_dir=self.corpus_dir,
            n_train_genuine=self.n_train_genuine,
            n_train_spoofed=self.n_train_spoofed,
            n_dev_genuine=self.n_dev_genuine,
            n_dev_spoofed=self.n_dev_spoofed,
            n_eval_genuine=self.n_eval_genuine,
            n_eval_spoofed=self.n_eval_spoofed,
        )

    def echo_lines(self) -> list[str]:
        return [f"{f.name} = {getattr(self, f.name)}" for f in dataclasses.fields(self)]


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(PipelineConfig)}
_PATH_KEYS = ("corpus_dir", "features_dir", "checkpoint_dir", "scores_dir", "report_dir")


def _parse_value(key: str, raw: str, line_no: int):
    target = _FIELD_TYPES[key]
    if key in _PATH_KEYS or target.type in ("str", "str | None"):
        return raw
    if target.type == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"line {line_no}: boolean key {key!r} got {raw!r}")
    try:
        if target.type == "int":
            return int(raw)
        if target.type == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: key {key!r} expects {target.type}, got {raw!r}") from None
    return raw


def parse_config(path: str | Path) -> PipelineConfig:
    """Read flat `key = value` text; unknown keys are rejected, missing keys
    take their defaults.  Blank lines and '#' comments are allowed."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, line_no)
    try:
        return PipelineConfig(**values)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing {path}; run the '{producer}' stage first")
    return path


def _manifest(cfg: PipelineConfig) -> list[channel.LabeledUtterance]:
    return channel.read_manifest(_require(Path(cfg.corpus_dir) / "manifest.csv", "synth"))


def _feature_path(cfg: PipelineConfig, utt_id: str) -> Path:
    return Path(cfg.features_dir) / f"{utt_id}.spec"


def _feature_loader(cfg: PipelineConfig):
    def load(utt_id: str) -> np.ndarray:
        return dsp.read_features(_require(_feature_path(cfg, utt_id), "featurize"))
    return load


def stage_synth(cfg: PipelineConfig) -> None:
    channel.build_corpus(cfg.corpus_config(), cfg.corpus_seed)


def stage_featurize(cfg: PipelineConfig) -> None:
    rows = _manifest(cfg)
    corpus_dir = Path(cfg.corpus_dir)
    out_dir = Path(cfg.features_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for u in rows:
        wav = dsp.read_wav(_require(corpus_dir / u.path, "synth"))
        spec = dsp.stft(wav)
        if cfg.reduced:
            spec = spec[:, ::2]
        rng = np.random.default_rng(np.random.SeedSequence((cfg.featurize_seed, zlib.crc32(u.id.encode()))))
        spec = dsp.fix_length(spec, cfg.input_frames, rng)
        spec = dsp.mean_normalize(spec)
        dsp.write_features(out_dir / f"{u.id}.spec", spec.astype(np.float32))


def _checkpoint_path(cfg: PipelineConfig, mode: str) -> Path:
    return Path(cfg.checkpoint_dir) / f"lcnn_{mode}.ckpt"


def _history_path(cfg: PipelineConfig, mode: str) -> Path:
    return Path(cfg.checkpoint_dir) / f"history_{mode}.csv"


def stage_train(cfg: PipelineConfig) -> None:
    rows = _manifest(cfg)
    loader = _feature_loader(cfg)
    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for mode in cfg.modes:
        result = model.train(rows, cfg.train_config(), loader, LOSS_WEIGHTS[mode])
        save_params(_checkpoint_path(cfg, mode), result.params)
        log_path = ckpt_dir / f"train_{mode}.log"
        log_path.write_text("\n".join(result.log_lines) + "\n", encoding="utf-8")
        with open(_history_path(cfg, mode), "w", encoding="utf-8", newline="") as f:
            f.write("epoch,mean_loss,acc_S,acc_E,acc_P,acc_R,dev_eer_pct,best\n")
            for st in result.history:
                best = 1 if st.epoch == result.best_epoch else 0
                f.write(
                    f"{st.epoch},{st.mean_loss:.6f},"
                    f"{st.dev_accuracy['spoof']:.4f},{st.dev_accuracy['env']:.4f},"
                    f"{st.dev_accuracy['playback']:.4f},{st.dev_accuracy['recorder']:.4f},"
                    f"{st.dev_eer_pct:.4f},{best}\n"
                )


def _codes_path(cfg: PipelineConfig, mode: str, subset: str) -> Path:
    return Path(cfg.scores_dir) / f"codes_{mode}_{subset}.csv"


def _extract_codes(params, arch, rows, loader, batch: int = 64):
    codes = []
    for start in range(0, len(rows), batch):
        chunk = rows[start:start + batch]
        x = np.stack([np.asarray(loader(u.id), dtype=np.float32) for u in chunk])
        _, c, _ = model.forward_batch(params, x, arch, training=False)
        codes.append(c)
    return np.concatenate(codes, axis=0)


def stage_codes(cfg: PipelineConfig) -> None:
    rows = _manifest(cfg)
    loader = _feature_loader(cfg)
    tc = cfg.train_config()
    arch = model.Architecture.from_config(tc)
    Path(cfg.scores_dir).mkdir(parents=True, exist_ok=True)
    for mode in cfg.modes:
        params = load_params(_require(_checkpoint_path(cfg, mode), "train"))
        for subset in ("train", "eval"):
            subset_rows = [u for u in rows if u.subset == subset]
            codes = _extract_codes(params, arch, subset_rows, loader)
            evaluation.export_codes(
                [u.id for u in subset_rows],
                [u.spoof for u in subset_rows],
                codes,
                _codes_path(cfg, mode, subset),
            )


def _backend_path(cfg: PipelineConfig, mode: str) -> Path:
    return Path(cfg.checkpoint_dir) / f"backend_{mode}.ckpt"


def stage_backend(cfg: PipelineConfig) -> None:
    for mode in cfg.modes:
        ids, labels, codes = evaluation.read_codes(
            _require(_codes_path(cfg, mode, "train"), "codes")
        )
        genuine = codes[[lab == "genuine" for lab in labels]]
        spoofed = codes[[lab == "spoofed" for lab in labels]]
        backend_mod.save_backend(
            _backend_path(cfg, mode),
            backend_mod.fit_gaussian(genuine),
            backend_mod.fit_gaussian(spoofed),
        )


def _scores_path(cfg: PipelineConfig, mode: str) -> Path:
    return Path(cfg.scores_dir) / f"scores_{mode}.txt"


def stage_score(cfg: PipelineConfig) -> None:
    for mode in cfg.modes:
        g_gen, g_spf = backend_mod.load_backend(_require(_backend_path(cfg, mode), "backend"))
        ids, _, codes = evaluation.read_codes(_require(_codes_path(cfg, mode, "eval"), "codes"))
        scores = np.array([backend_mod.llr_score(c, g_gen, g_spf) for c in codes])
        backend_mod.write_scores(_scores_path(cfg, mode), ids, scores)


def eval_trials(cfg: PipelineConfig, mode: str) -> evaluation.TrialSet:
    """Join a mode's score file with the manifest labels."""
    rows = {u.id: u for u in _manifest(cfg)}
    ids, scores = backend_mod.read_scores(_require(_scores_path(cfg, mode), "score"))
    labels = []
    for utt_id in ids:
        if utt_id not in rows:
            raise ValueError(f"scored utterance {utt_id!r} not present in manifest")
        labels.append(rows[utt_id].spoof)
    return evaluation.TrialSet.from_rows(zip(ids, scores, labels))


def stage_eval(cfg: PipelineConfig) -> None:
    rows = _manifest(cfg)
    report: list[str] = ["[config]"]
    report.extend(cfg.echo_lines())
    report.append("")
    report.append("[corpus]")
    for subset in ("train", "dev", "eval"):
        for label in ("genuine", "spoofed"):
            count = sum(1 for u in rows if u.subset == subset and u.spoof == label)
            report.append(f"n_{subset}_{label}={count}")
    for mode in cfg.modes:
        history = _require(_history_path(cfg, mode), "train").read_text(encoding="utf-8")
        lines = [ln for ln in history.strip().splitlines()[1:]]
        report.append("")
        report.append(f"[train mode={mode}]")
        final_loss = lines[-1].split(",")[1]
        report.append(f"final_train_loss={final_loss}")
        for ln in lines:
            epoch, loss, *_rest, eer, best = ln.split(",")
            marker = " best" if best == "1" else ""
            report.append(f"epoch={epoch} loss={loss} dev_eer_pct={eer}{marker}")
    for mode in cfg.modes:
        trials = eval_trials(cfg, mode)
        report.append("")
        report.append(f"[eval mode={mode}]")
        report.append(evaluation.summary_block(trials))
    out_dir = Path(cfg.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")


_STAGES = {
    "synth": stage_synth,
    "featurize": stage_featurize,
    "train": stage_train,
    "codes": stage_codes,
    "backend": stage_backend,
    "score": stage_score,
    "eval": stage_eval,
}


def run(command: str, cfg: PipelineConfig, log=print) -> int:
    """Execute one pipeline command; returns a process exit status."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}; choose from {COMMANDS}")
    sequence = list(_STAGES) if command == "all" else [command]
    for name in sequence:
        try:
            log(f"[{name}] running")
            _STAGES[name](cfg)
        except Exception as e:  # surface which stage died, keep exit nonzero
            log(f"error in stage '{name}': {e}")
            return 1
    return 0
