"""Replay-attack spoofing detection with multi-task replay-noise learning.

Submodules:
    dsp         waveform I/O and the log-spectrogram front-end
    channel     synthetic replay-channel corpus (impulse-response families)
    nn          dense layers with hand-written gradients, Adam, grad checks
    model       the light CNN with four classification heads and training
    backend     two-Gaussian log-likelihood-ratio scoring
    evaluation  DET operating points, EER, code export
    pipeline    file-based stage orchestration
    cli         `replay-noise` command-line entry point
"""

from . import backend, channel, checkpoint, dsp, evaluation, model, nn, pipeline

__all__ = [
    "backend",
    "channel",
    "checkpoint",
    "dsp",
    "evaluation",
    "model",
    "nn",
    "pipeline",
]

__version__ = "0.1.0"
