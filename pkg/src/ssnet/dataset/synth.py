"""Synthetic EEG-like epochs built from characteristic frequency bands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ssnet.dataset.epochs import EpochSet, stage_code
from ssnet.errors import NyquistViolation
from ssnet.rng import stream


@dataclass(frozen=True)
class SynthStageProfile:
    stage: str
    bands: tuple  # of (low_hz, high_hz, relative_amplitude)
    noise_sigma: float = 0.1

    def validate(self, sample_rate: float) -> None:
        if not self.bands:
            raise ValueError(f"profile {self.stage} has no bands")
        for low, high, _ in self.bands:
            if not 0 < low < high:
                raise ValueError(f"profile {self.stage}: band ({low}, {high}) must satisfy 0 < low < high")
            if high >= sample_rate / 2:
                raise NyquistViolation(f"profile {self.stage}: band edge {high} Hz is not below Nyquist {sample_rate / 2} Hz")


ALPHA, THETA, SPINDLE, DELTA = (8.0, 12.0), (4.0, 8.0), (12.0, 15.0), (0.5, 4.0)

DEFAULT_PROFILES = {
    "W": SynthStageProfile("W", ((*ALPHA, 1.0),)),
    "N1": SynthStageProfile("N1", ((*THETA, 1.0),)),
    "N2": SynthStageProfile("N2", ((*SPINDLE, 1.0),)),
    "N3": SynthStageProfile("N3", ((*DELTA, 1.0),)),
    "REM": SynthStageProfile("REM", ((*ALPHA, 1.0), (*THETA, 1.0))),
}


def profiles_for(stages, noise_sigma: float | None = None) -> list[SynthStageProfile]:
    out = []
    for s in stages:
        p = DEFAULT_PROFILES[s]
        out.append(p if noise_sigma is None else SynthStageProfile(p.stage, p.bands, noise_sigma))
    return out


def generate_synthetic(
    profiles,
    n_per_class,
    n_channels: int = 1,
    sample_rate: float = 100.0,
    seed: int = 0,
    epoch_s: float = 30.0,
    dtype=np.float32,
) -> EpochSet:
    """Sum of band-limited sinusoids plus Gaussian noise, independently per channel.

    Each band contributes ``amp * sin(2 pi f t + phi)`` with f uniform in the
    band and phi uniform in [0, 2 pi). ``n_per_class`` is one count for every
    profile or a sequence with one count per profile.
    """
    epoch_len = int(round(epoch_s * sample_rate))
    t = np.arange(epoch_len) / sample_rate
    profiles = list(profiles)
    counts = [int(n_per_class)] * len(profiles) if np.isscalar(n_per_class) else [int(c) for c in n_per_class]
    if len(counts) != len(profiles):
        raise ValueError(f"{len(counts)} class sizes for {len(profiles)} profiles")
    xs, stages = [], []
    for k, (prof, n_k) in enumerate(zip(profiles, counts)):
        prof.validate(sample_rate)
        rng = stream(seed, "synth", k, prof.stage)
        bands = np.array(prof.bands, dtype=np.float64)
        shape = (n_k, n_channels, len(bands))
        freq = rng.uniform(bands[:, 0], bands[:, 1], size=shape)
        phase = rng.uniform(0.0, 2 * np.pi, size=shape)
        x = np.zeros((n_k, n_channels, epoch_len))
        for b in range(len(bands)):
            x += bands[b, 2] * np.sin(2 * np.pi * freq[..., b, None] * t + phase[..., b, None])
        if prof.noise_sigma:
            x += rng.normal(0.0, prof.noise_sigma, size=x.shape)
        xs.append(x.astype(dtype))
        stages.append(np.full(n_k, stage_code(prof.stage)))
    n = sum(counts)
    return EpochSet(
        x=np.concatenate(xs) if xs else np.zeros((0, n_channels, epoch_len), dtype=dtype),
        stages=np.concatenate(stages) if stages else np.zeros(0, dtype=np.int64),
        recording=np.array([f"synth-{seed}"] * n),
        index=np.arange(n),
        channels=tuple(f"synth{c}" for c in range(n_channels)),
        sample_rate_hz=float(sample_rate),
        meta={"synthetic": True, "seed": int(seed)},
    )


def peak_frequency(signal: np.ndarray, sample_rate: float) -> float:
    """Frequency of the periodogram maximum (DC excluded)."""
    spec = np.abs(np.fft.rfft(signal - np.mean(signal))) ** 2
    freqs = np.fft.rfftfreq(len(signal), 1.0 / sample_rate)
    spec[0] = 0.0
    return float(freqs[np.argmax(spec)])
