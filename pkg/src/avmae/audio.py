"""Audio frontend: waveform -> log-mel spectrogram -> patch tokens.

A t-second 16 kHz mono waveform maps to a 100t x 128 log-mel grid (25 ms
Hamming window, 10 ms hop, 128 mel bins over 0..8 kHz), which is then cut
into non-overlapping patches, 16x16 by default, flattened row-major.
"""

import numpy as np

from .errors import InvalidInput, ShapeError
from .tokens import TokenSequence, grid_coords

SAMPLE_RATE = 16000
N_MELS = 128
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
LOG_EPS = 1e-6


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Area-normalized triangular mel filters, shape (n_fft//2 + 1, n_mels)."""
    f_max = sample_rate / 2.0
    edges_hz = _mel_to_hz(np.linspace(0.0, _hz_to_mel(f_max), n_mels + 2))
    fft_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fb = np.zeros((len(fft_freqs), n_mels), dtype=np.float64)
    for i in range(n_mels):
        lo, ctr, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (fft_freqs - lo) / (ctr - lo)
        down = (hi - fft_freqs) / (hi - ctr)
        fb[:, i] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    return fb


_FBANK_CACHE = {}


def _fbank(n_mels, n_fft, sample_rate):
    key = (n_mels, n_fft, sample_rate)
    if key not in _FBANK_CACHE:
        _FBANK_CACHE[key] = mel_filterbank(n_mels, n_fft, sample_rate)
    return _FBANK_CACHE[key]


def compute_log_mel(samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Log-mel spectrogram of a mono 16 kHz waveform, shape (100*t, 128).

    The waveform is zero-padded up to a whole second so the frame count is
    exactly 100 per second, then reflection-padded by half a window so frames
    are centered on hop multiples.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInput("waveform must be a non-empty 1-D array")
    if sample_rate != SAMPLE_RATE:
        raise InvalidInput(f"expected {SAMPLE_RATE} Hz input, got {sample_rate} (no resampling)")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("waveform contains non-finite values")

    n = SAMPLE_RATE * int(np.ceil(x.size / SAMPLE_RATE))
    if n > x.size:
        x = np.concatenate([x, np.zeros(n - x.size)])
    pad = WIN_LENGTH // 2
    x = np.pad(x, pad, mode="reflect")

    n_frames = n // HOP_LENGTH
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hamming(WIN_LENGTH)[None, :]
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    mel = power @ _fbank(N_MELS, N_FFT, SAMPLE_RATE)
    return np.log(mel + LOG_EPS)


def patchify_spectrogram(spec: np.ndarray, patch=(16, 16), validate_bins: bool = True) -> TokenSequence:
    """Cut a (..., T, F) grid into flattened patches, row-major over (time, freq).

    Returns a TokenSequence of n = (T/pt)*(F/pf) patches of pt*pf values each,
    with (time-index, freq-index) grid coordinates.
    """
    s = np.asarray(spec)
    pt, pf = patch
    T, F = s.shape[-2], s.shape[-1]
    if validate_bins and F != N_MELS:
        raise ShapeError(f"expected {N_MELS} mel bins, got {F}")
    if T % pt or F % pf:
        raise ShapeError(f"grid {T}x{F} not divisible by patch {pt}x{pf}")
    lead = s.shape[:-2]
    g = s.reshape(lead + (T // pt, pt, F // pf, pf))
    g = np.moveaxis(g, -3, -2)  # (..., T/pt, F/pf, pt, pf)
    patches = g.reshape(lead + ((T // pt) * (F // pf), pt * pf))
    pos = grid_coords((T // pt, F // pf))
    return TokenSequence(np.ascontiguousarray(patches), pos, "audio")


def unpatchify_spectrogram(patches: np.ndarray, grid_shape, patch=(16, 16)) -> np.ndarray:
    """Inverse of patchify_spectrogram for the last two axes."""
    p = np.asarray(patches)
    pt, pf = patch
    T, F = grid_shape
    lead = p.shape[:-2]
    g = p.reshape(lead + (T // pt, F // pf, pt, pf))
    g = np.moveaxis(g, -3, -2)
    return np.ascontiguousarray(g.reshape(lead + (T, F)))


def random_time_shift(spec: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Circularly rotate the time axis by a uniform random offset."""
    s = np.asarray(spec)
    offset = int(rng.integers(0, s.shape[-2]))
    return np.roll(s, offset, axis=-2)
