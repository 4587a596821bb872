import numpy as np
import pytest

from streamtag import MelSpectrogram, ModelConfig, seeded_init


@pytest.fixture(scope="session")
def cfg_tiny():
    return ModelConfig.from_variant("tiny")


@pytest.fixture(scope="session")
def weights_tiny(cfg_tiny):
    return seeded_init(cfg_tiny, seed=1234)


@pytest.fixture()
def make_mel():
    def _make(n_frames, seed=0, scale=1.0):
        rng = np.random.default_rng(seed)
        return MelSpectrogram(values=rng.normal(scale=scale, size=(64, n_frames)))

    return _make


@pytest.fixture()
def write_wav(tmp_path):
    """Write a mono 16 kHz WAV and return its path."""
    import scipy.io.wavfile

    def _write(name, samples, rate=16000, dtype=np.int16):
        samples = np.asarray(samples)
        if dtype == np.int16 and samples.dtype != np.int16:
            samples = np.clip(samples * 32767, -32768, 32767).astype(np.int16)
        elif dtype == np.float32:
            samples = samples.astype(np.float32)
        path = tmp_path / name
        scipy.io.wavfile.write(path, rate, samples)
        return str(path)

    return _write


def tone(duration_s, freq=440.0, rate=16000, amp=0.5):
    t = np.arange(int(duration_s * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)
