"""EEG preprocessing: filtering, decimation, artifact regression, windowing.

The full chain, in order: decimate (anti-aliased) -> band-pass 1-45 Hz ->
EOG regression -> mastoid re-reference -> per-trial z-score -> segment into
overlapping decision windows. All steps are pure functions of their inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

FFT_LEN = 2048          # analysis length for 10 s windows at 128 Hz (zero-padded)
ALPHA_BAND = (8.0, 14.0)


@dataclass
class Signal:
    """Multichannel signal: data is (channels, samples), float64."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"Signal data must be 2-D (channels, samples), got {self.data.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class DecisionWindow:
    """One fixed-length segment with its attention label (left=0, right=1)."""

    data: np.ndarray
    label: int
    trial_id: int
    subject_id: str
    start_sample: int


class FirFilter:
    """Linear-phase FIR filter: odd tap count, exactly symmetric taps."""

    def __init__(self, taps: np.ndarray):
        taps = np.asarray(taps, dtype=np.float64)
        if taps.size % 2 == 0:
            raise ValueError("tap count must be odd")
        self.taps = taps

    @property
    def group_delay(self) -> int:
        return (self.taps.size - 1) // 2

    def response(self, freqs, sample_rate: float) -> np.ndarray:
        """Complex frequency response, evaluated directly from the taps."""
        f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
        n = np.arange(self.taps.size)
        return np.exp(-2j * np.pi * np.outer(f, n) / sample_rate) @ self.taps


def _hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def _windowed_sinc(cutoff_hz: float, taps: int, sample_rate: float) -> np.ndarray:
    # Build one half and mirror it so symmetry is exact down to the last bit.
    m = (taps - 1) // 2
    n = np.arange(m + 1)
    ideal = 2.0 * cutoff_hz / sample_rate * np.sinc(2.0 * cutoff_hz / sample_rate * (n - m))
    half = ideal * _hamming(taps)[: m + 1]
    return np.concatenate([half, half[-2::-1]])


def design_lowpass(cutoff_hz: float, taps: int, sample_rate: float) -> FirFilter:
    """Hamming-windowed sinc low-pass, DC gain normalized to 1."""
    if not 0.0 < cutoff_hz < sample_rate / 2.0:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {sample_rate / 2})")
    if taps % 2 == 0:
        raise ValueError("tap count must be odd")
    h = _windowed_sinc(cutoff_hz, taps, sample_rate)
    return FirFilter(h / h.sum())


def design_bandpass(lo_hz: float, hi_hz: float, taps: int, sample_rate: float) -> FirFilter:
    """Hamming-windowed sinc band-pass, unit gain at the band center."""
    if not 0.0 < lo_hz < hi_hz < sample_rate / 2.0:
        raise ValueError(f"band ({lo_hz}, {hi_hz}) invalid at fs={sample_rate}")
    if taps % 2 == 0:
        raise ValueError("tap count must be odd")
    h = _windowed_sinc(hi_hz, taps, sample_rate) - _windowed_sinc(lo_hz, taps, sample_rate)
    filt = FirFilter(h)
    center = 0.5 * (lo_hz + hi_hz)
    gain = np.abs(filt.response(center, sample_rate))[0]
    return FirFilter(h / gain)


def _convolve_same(data: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Row-wise FFT convolution, 'same' alignment (kernel centered)."""
    c, t = data.shape
    full = t + taps.size - 1
    nfft = 1 << (full - 1).bit_length()
    spec = np.fft.rfft(data, nfft) * np.fft.rfft(taps, nfft)
    out = np.fft.irfft(spec, nfft)[:, :full]
    m = (taps.size - 1) // 2
    return out[:, m:m + t]


def _filter_reflect(data: np.ndarray, filt: FirFilter, passes: int) -> np.ndarray:
    """Apply the filter with reflection padding of one filter length per side."""
    pad = filt.taps.size
    t = data.shape[1]
    xp = np.pad(data, ((0, 0), (pad, pad)), mode="reflect")
    for _ in range(passes):
        xp = _convolve_same(xp, filt.taps)
    return xp[:, pad:pad + t]


def decimate(sig: Signal, factor: int = 4, taps: int = 127) -> Signal:
    """Anti-aliased integer downsampling (low-pass, then keep every factor-th).

    The anti-alias cutoff is 0.4x the output rate (51.2 Hz for 512 -> 128).
    Group delay is compensated by centered convolution, so no shift.
    """
    if factor < 1 or sig.sample_rate % factor != 0:
        raise ValueError(f"sample rate {sig.sample_rate} not divisible by factor {factor}")
    if factor == 1:
        return Signal(sig.data.copy(), sig.sample_rate)
    out_rate = sig.sample_rate / factor
    filt = design_lowpass(0.4 * out_rate, taps, sig.sample_rate)
    smoothed = _filter_reflect(sig.data, filt, passes=1)
    return Signal(smoothed[:, ::factor], out_rate)


def bandpass_zero_phase(sig: Signal, lo_hz: float = 1.0, hi_hz: float = 45.0,
                        taps: int = 513) -> Signal:
    """Forward-backward band-pass: zero net phase, squared magnitude response."""
    if sig.n_samples < 3 * taps:
        raise ValueError(f"signal length {sig.n_samples} < 3x filter length {taps}")
    filt = design_bandpass(lo_hz, hi_hz, taps, sig.sample_rate)
    # Symmetric taps: the time-reversed (backward) pass equals a second
    # forward pass, so two centered passes realize filtfilt.
    return Signal(_filter_reflect(sig.data, filt, passes=2), sig.sample_rate)


def regress_out_eog(eeg: Signal, eog: Signal) -> Signal:
    """Subtract the least-squares projection of each channel onto the EOG span.

    Solves the normal equations per trial. A rank-deficient EOG Gram matrix
    is ridge-regularized (1e-8 * trace) with a warning instead of failing.
    """
    if eeg.n_samples != eog.n_samples:
        raise ValueError("EEG and EOG must have the same number of samples")
    if eog.n_channels < 1:
        raise ValueError("need at least one EOG channel")
    e = eog.data
    gram = e @ e.T
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        warnings.warn("EOG covariance is rank deficient; applying ridge regularization")
        gram = gram + 1e-8 * np.trace(gram) * np.eye(gram.shape[0])
    cross = eeg.data @ e.T
    coef = np.linalg.solve(gram, cross.T).T
    return Signal(eeg.data - coef @ e, eeg.sample_rate)


def rereference_mastoids(sig: Signal, mastoid_indices: tuple[int, int]) -> Signal:
    """Subtract the mastoid average from every channel, sample-wise."""
    i, j = mastoid_indices
    if not (0 <= i < sig.n_channels and 0 <= j < sig.n_channels):
        raise ValueError(f"mastoid indices {mastoid_indices} out of range")
    ref = 0.5 * (sig.data[i] + sig.data[j])
    return Signal(sig.data - ref, sig.sample_rate)


def zscore_per_trial(sig: Signal) -> Signal:
    """Normalize each channel to mean 0, std 1 over the whole trial.

    Zero-variance channels are centered (all zeros) and flagged with a
    warning rather than divided by zero.
    """
    mean = sig.data.mean(axis=1, keepdims=True)
    std = sig.data.std(axis=1, keepdims=True)
    dead = std[:, 0] == 0.0
    if dead.any():
        warnings.warn(f"{int(dead.sum())} zero-variance channel(s) left centered at 0")
        std = std.copy()
        std[dead] = 1.0
    return Signal((sig.data - mean) / std, sig.sample_rate)


def segment_windows(trial: Signal, label: int, trial_id: int, subject_id: str,
                    window_seconds: float = 10.0, overlap: float = 0.5) -> list[DecisionWindow]:
    """Cut a trial into overlapping decision windows that fit fully inside it."""
    w_f = window_seconds * trial.sample_rate
    if abs(w_f - round(w_f)) > 1e-9:
        raise ValueError("window length must be an integer number of samples")
    w = int(round(w_f))
    hop_f = w * (1.0 - overlap)
    if abs(hop_f - round(hop_f)) > 1e-9 or round(hop_f) < 1:
        raise ValueError("overlap must give an integer, positive hop")
    hop = int(round(hop_f))
    if trial.n_samples < w:
        warnings.warn(f"trial {trial_id} shorter than one window; no windows emitted")
        return []
    return [
        DecisionWindow(trial.data[:, s:s + w].copy(), label, trial_id, subject_id, s)
        for s in range(0, trial.n_samples - w + 1, hop)
    ]


def fft_power(x: np.ndarray, n_fft: int = FFT_LEN) -> np.ndarray:
    """Zero-pad to n_fft and return |X[k]|^2 for k = 0..n_fft/2."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size > n_fft:
        raise ValueError(f"expected a 1-D input of length <= {n_fft}")
    spec = np.fft.rfft(x, n_fft)
    return np.abs(spec) ** 2


def alpha_band_bins(sample_rate: float = 128.0, n_fft: int = FFT_LEN) -> tuple[int, int]:
    """Inclusive bin range covering the alpha band at the given resolution."""
    df = sample_rate / n_fft
    lo = int(np.ceil(ALPHA_BAND[0] / df))
    hi = int(np.floor(ALPHA_BAND[1] / df))
    return lo, hi


def alpha_power(data: np.ndarray, sample_rate: float = 128.0) -> np.ndarray:
    """Mean alpha-band (8-14 Hz) spectral power per channel.

    Expects preprocessed 128 Hz decision-window data, (channels, 1280).
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if sample_rate != 128.0:
        raise ValueError("alpha_power is defined for 128 Hz windows")
    lo, hi = alpha_band_bins(sample_rate)
    spec = np.abs(np.fft.rfft(data, FFT_LEN, axis=1)) ** 2
    return spec[:, lo:hi + 1].mean(axis=1)


def preprocess_trial(raw: Signal, eeg_indices, mastoid_indices, eog_indices,
                     target_rate: float = 128.0) -> Signal:
    """Run the full chain on one raw trial; returns z-scored EEG at 128 Hz.

    Channel selection happens after re-referencing, so the mastoid average is
    computed from the cleaned (EOG-regressed) mastoid channels.
    """
    if raw.sample_rate % target_rate != 0:
        raise ValueError(f"cannot decimate {raw.sample_rate} Hz to {target_rate} Hz by an integer factor")
    sig = decimate(raw, int(raw.sample_rate // target_rate))
    sig = bandpass_zero_phase(sig)
    eog = Signal(sig.data[list(eog_indices)], sig.sample_rate)
    rest_idx = [i for i in range(sig.n_channels) if i not in set(eog_indices)]
    rest = regress_out_eog(Signal(sig.data[rest_idx], sig.sample_rate), eog)
    pos = {ch: k for k, ch in enumerate(rest_idx)}
    rest = rereference_mastoids(rest, (pos[mastoid_indices[0]], pos[mastoid_indices[1]]))
    eeg = Signal(rest.data[[pos[i] for i in eeg_indices]], rest.sample_rate)
    return zscore_per_trial(eeg)
