"""Audio frontend: WAV loading and 64-bin log-mel feature extraction.

16 kHz mono in, 64 x T log-mel frames out (32 ms Hann window, 10 ms hop,
HTK-style triangular filters spanning 0-8 kHz, natural log).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000
N_MELS = 64


class AudioError(ValueError):
    """Raised for unreadable or out-of-contract audio input."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono 16 kHz waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    channel_count: int = 1

    def __post_init__(self):
        if self.sample_rate_hz != SAMPLE_RATE:
            raise AudioError(
                f"sample_rate_hz must be {SAMPLE_RATE}, got {self.sample_rate_hz}; "
                "resample the file before loading"
            )
        if self.channel_count != 1:
            raise AudioError("channel_count must be 1")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError("samples must be one-dimensional")
        if samples.size and not np.isfinite(samples).all():
            raise AudioError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class MelFrontendConfig:
    n_mels: int = N_MELS
    window_ms: int = 32
    hop_ms: int = 10
    fft_size: int = 512
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels != N_MELS:
            raise ValueError(f"n_mels must be {N_MELS}")
        if self.hop_samples >= self.window_samples:
            raise ValueError("hop must be shorter than the window")
        if self.fft_size < self.window_samples:
            raise ValueError("fft_size must cover the window")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return self.window_ms * SAMPLE_RATE // 1000

    @property
    def hop_samples(self) -> int:
        return self.hop_ms * SAMPLE_RATE // 1000


@dataclass(frozen=True)
class MelSpectrogram:
    """64 x T matrix of natural-log mel powers at 100 frames/s."""

    values: np.ndarray
    frame_rate_hz: int = 100

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != N_MELS:
            raise ValueError(f"expected {N_MELS} x T matrix, got shape {values.shape}")
        if values.size and not np.isfinite(values).all():
            raise ValueError("mel values contain non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_count(n_samples: int, cfg: MelFrontendConfig | None = None) -> int:
    """Number of analysis frames for a waveform of ``n_samples`` samples."""
    cfg = cfg or MelFrontendConfig()
    if n_samples < cfg.window_samples:
        return 0
    return (n_samples - cfg.window_samples) // cfg.hop_samples + 1


@dataclass(frozen=True)
class NormalizerParams:
    """Inference-mode per-bin batch-norm: gamma * (x - mean) / sqrt(var + eps) + beta."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_MELS))
    var: np.ndarray = field(default_factory=lambda: np.ones(N_MELS))
    gamma: np.ndarray = field(default_factory=lambda: np.ones(N_MELS))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_MELS))
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("mean", "var", "gamma", "beta"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (N_MELS,):
                raise ValueError(f"{name} must have length {N_MELS}")
            if not np.isfinite(vec).all():
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, vec)
        if np.any(self.var + self.eps <= 0):
            raise ValueError("var + eps must be positive")

    @classmethod
    def identity(cls) -> "NormalizerParams":
        return cls(eps=0.0)


def load_wav(path) -> AudioBuffer:
    """Read a PCM WAV file (16-bit int or 32-bit float, mono, 16 kHz)."""
    import scipy.io.wavfile

    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError as exc:
        raise AudioError(f"audio file not found: {path}") from exc
    except Exception as exc:  # scipy raises bare ValueError on bad RIFF
        raise AudioError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioError("channel_count must be 1")
    if rate != SAMPLE_RATE:
        raise AudioError(
            f"sample_rate_hz must be {SAMPLE_RATE}, got {rate}; "
            "resample the file before loading"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(
            f"unsupported WAV encoding {data.dtype}; expected int16 or float32"
        )
    return AudioBuffer(samples=samples)


def buffer_from_raw_f32(raw: bytes) -> AudioBuffer:
    """Interpret headerless little-endian float32 bytes as mono 16 kHz audio."""
    usable = len(raw) - len(raw) % 4
    samples = np.frombuffer(raw[:usable], dtype="<f4").astype(np.float64)
    return AudioBuffer(samples=samples)


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelFrontendConfig | None = None) -> np.ndarray:
    """HTK-style triangular filters, shape (64, fft_size // 2 + 1), 0-8 kHz."""
    cfg = cfg or MelFrontendConfig()
    n_bins = cfg.fft_size // 2 + 1
    fft_freqs = np.arange(n_bins) * SAMPLE_RATE / cfg.fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(SAMPLE_RATE / 2), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, ctr, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


_FB_CACHE: dict[MelFrontendConfig, np.ndarray] = {}


def compute_mel(audio: AudioBuffer, cfg: MelFrontendConfig | None = None) -> MelSpectrogram:
    """STFT power -> mel filterbank -> natural log with floor."""
    cfg = cfg or MelFrontendConfig()
    win = cfg.window_samples
    hop = cfg.hop_samples
    x = audio.samples
    n_frames = frame_count(x.size, cfg)
    if n_frames < 1:
        raise AudioError(
            f"audio too short: need at least {win} samples, got {x.size}"
        )
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann(win)
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    fb = _FB_CACHE.get(cfg)
    if fb is None:
        fb = _FB_CACHE.setdefault(cfg, mel_filterbank(cfg))
    mel_power = power @ fb.T  # (T, 64)
    values = np.log(np.maximum(mel_power, cfg.log_floor)).T
    return MelSpectrogram(values=values)


def normalize(mel: MelSpectrogram, p: NormalizerParams) -> MelSpectrogram:
    """Apply per-bin affine normalization to a mel spectrogram."""
    scale = p.gamma / np.sqrt(p.var + p.eps)
    out = scale[:, None] * (mel.values - p.mean[:, None]) + p.beta[:, None]
    return MelSpectrogram(values=out, frame_rate_hz=mel.frame_rate_hz)
