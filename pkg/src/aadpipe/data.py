"""On-disk EEG format, the bundled electrode table, and a synthetic generator.

Trial files use a tiny neutral container ("EEGB"): a fixed header followed by
row-major little-endian float64 samples. The synthetic generator plants
lateralized alpha oscillations on a known channel set so the whole pipeline
can be verified end to end against ground truth.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .topomap import ElectrodeLayout

MAGIC = b"EEGB"
VERSION = 1
_HEADER = struct.Struct("<4sHIId")  # magic, version, n_channels, n_samples, sample_rate

MASTOID_CHANNELS = ("M1", "M2")
EOG_CHANNELS = ("EOG1", "EOG2")

# Frontal channels that receive a fixed fraction of the blink signal.
FRONTAL_CHANNELS = ("Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8")

DEFAULT_INFORMATIVE = ("P7", "P8", "PO7", "PO8", "O1", "O2", "TP7", "TP8")


class FormatError(ValueError):
    """Raised when an EEGB file is malformed; message includes byte offsets."""


def write_trial(path, data: np.ndarray, sample_rate: float) -> None:
    """Write a (channels, samples) float64 matrix; round-trips bit-exactly."""
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
        raise ValueError(f"trial data must be non-empty 2-D, got shape {data.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, data.shape[0], data.shape[1], sample_rate))
        fh.write(data.tobytes())


def read_trial(path) -> tuple[np.ndarray, float]:
    """Read an EEGB file back into (data, sample_rate)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the {_HEADER.size}-byte header "
                          f"(got {len(raw)} bytes)")
    magic, version, n_ch, n_s, rate = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    expected = _HEADER.size + n_ch * n_s * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n_ch}x{n_s} samples, "
                          f"got {len(raw)} (payload starts at offset {_HEADER.size})")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n_ch, n_s)
    return data.astype(np.float64), rate


@dataclass
class TrialInfo:
    path: str
    n_samples: int
    label: int  # left=0, right=1


@dataclass
class SubjectManifest:
    subject_id: str
    sample_rate: float
    channel_names: list[str]
    channel_roles: list[str]  # "eeg" | "mastoid" | "eog", aligned with names
    trials: list[TrialInfo] = field(default_factory=list)

    def indices(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.channel_roles) if r == role]

    def save(self, path) -> None:
        doc = asdict(self)
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SubjectManifest":
        doc = json.loads(Path(path).read_text())
        doc["trials"] = [TrialInfo(**t) for t in doc["trials"]]
        return cls(**doc)


def biosemi64_layout() -> ElectrodeLayout:
    """The bundled 64-channel layout (10-10 names on a spherical head)."""
    text = resources.files("aadpipe").joinpath("biosemi64.txt").read_text()
    names, az, polar = [], [], []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, a, p = line.split()
        names.append(name)
        az.append(np.radians(float(a)))
        polar.append(np.radians(float(p)))
    return ElectrodeLayout(names, np.array(az), np.array(polar))


@dataclass
class SynthConfig:
    """Knobs for the synthetic EEG generator."""

    n_trials: int = 60
    trial_seconds: float = 50.0
    informative: tuple[str, ...] = DEFAULT_INFORMATIVE
    depth: float = 0.5          # lateralized alpha modulation depth, in (0, 1)
    noise_exponent: float = 1.0  # spectral slope of the background (1 -> pink)
    snr: float = 1.0             # alpha amplitude relative to noise std
    blink_rate: float = 0.2      # blinks per second on the EOG channels
    blink_leak: float = 0.1      # fixed mixing of blinks into frontal EEG
    sample_rate: float = 512.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.depth < 1.0:
            raise ValueError("depth must lie in (0, 1)")
        layout_names = set(biosemi64_layout().names)
        missing = set(self.informative) - layout_names
        if missing:
            raise ValueError(f"informative channels not in layout: {sorted(missing)}")


def _colored_noise(rng: np.random.Generator, n_channels: int, n_samples: int,
                   exponent: float, sample_rate: float) -> np.ndarray:
    """1/f^exponent noise, unit standard deviation per channel."""
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-exponent / 2.0)
    spec = (rng.standard_normal((n_channels, freqs.size))
            + 1j * rng.standard_normal((n_channels, freqs.size))) * scale
    x = np.fft.irfft(spec, n_samples, axis=1)
    return x / x.std(axis=1, keepdims=True)


def synth_generate(cfg: SynthConfig, out_dir, subject_id: str = "S01") -> SubjectManifest:
    """Write one synthetic subject: EEGB trial files plus a JSON manifest.

    Per trial, every channel carries colored background noise. Each
    informative channel additionally carries an independent 10 Hz oscillation
    whose amplitude is snr*(1+depth) on the attended side and snr*(1-depth)
    on the other side (attended-left means stronger alpha on left-hemisphere
    planted channels; this is a generator convention). Blink transients on
    the EOG channels leak into frontal EEG channels with fixed gain.
    Labels alternate left/right so classes stay balanced.
    """
    layout = biosemi64_layout()
    out_dir = Path(out_dir)
    trial_dir = out_dir / subject_id
    trial_dir.mkdir(parents=True, exist_ok=True)

    names = list(layout.names) + list(MASTOID_CHANNELS) + list(EOG_CHANNELS)
    roles = ["eeg"] * 64 + ["mastoid"] * 2 + ["eog"] * 2
    manifest = SubjectManifest(subject_id, cfg.sample_rate, names, roles)

    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.trial_seconds * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    info_idx = [layout.index(nm) for nm in cfg.informative]
    # positive projected v means left hemisphere
    left_side = np.sin(layout.azimuth) > 0
    frontal_idx = [layout.index(nm) for nm in FRONTAL_CHANNELS]

    for k in range(cfg.n_trials):
        label = k % 2  # left=0, right=1, alternating -> balanced
        x = _colored_noise(rng, len(names), n, cfg.noise_exponent, cfg.sample_rate)
        for ci in info_idx:
            attended = (label == 0) == left_side[ci]
            amp = cfg.snr * (1.0 + cfg.depth if attended else 1.0 - cfg.depth)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x[ci] += amp * np.sin(2.0 * np.pi * 10.0 * t + phase)
        blink = np.zeros(n)
        for t0 in rng.uniform(0.0, cfg.trial_seconds, rng.poisson(cfg.blink_rate * cfg.trial_seconds)):
            blink += np.exp(-0.5 * ((t - t0) / 0.08) ** 2)
        blink *= 40.0
        x[66] += blink          # EOG1/EOG2; mastoids (64, 65) stay noise-only
        x[67] += 0.9 * blink
        for ci in frontal_idx:
            x[ci] += cfg.blink_leak * blink

        path = trial_dir / f"trial{k:03d}.eegb"
        write_trial(path, x, cfg.sample_rate)
        manifest.trials.append(TrialInfo(str(path.relative_to(out_dir)), n, label))

    manifest.save(out_dir / f"{subject_id}_manifest.json")
    return manifest


def load_subject_trials(manifest: SubjectManifest, data_dir):
    """Yield (data, label, trial_index) for every trial in the manifest."""
    data_dir = Path(data_dir)
    for k, info in enumerate(manifest.trials):
        data, rate = read_trial(data_dir / info.path)
        if rate != manifest.sample_rate or data.shape != (len(manifest.channel_names), info.n_samples):
            raise FormatError(f"{info.path}: dims or rate disagree with the manifest")
        yield data, info.label, k
