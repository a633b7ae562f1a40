"""Surface-Laplacian filtering and Hanning-window log-bandpower features."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

POWER_FLOOR = 1e-20

# Twelve 2 Hz bands whose lower edges run from 7 to 29 Hz (motor imagery setup).
MOTOR_IMAGERY_BANDS = tuple((float(lo), float(lo + 2)) for lo in range(7, 31, 2))
# Named bands of the session-transfer setup.
NAMED_BANDS = {
    "delta": (1.0, 5.0),
    "theta": (5.0, 8.0),
    "alpha": (8.0, 12.0),
    "beta1": (12.0, 20.0),
    "beta2": (20.0, 30.0),
    "gamma1": (30.0, 70.0),
    "gamma2": (70.0, 90.0),
}


@dataclass(frozen=True)
class BandSpec:
    bands: tuple
    labels: tuple | None = None

    def __post_init__(self):
        bands = tuple((float(lo), float(hi)) for lo, hi in self.bands)
        if not bands:
            raise ValidationError("band spec is empty")
        for lo, hi in bands:
            if not (0 <= lo < hi):
                raise ValidationError(f"invalid band [{lo}, {hi})")
        object.__setattr__(self, "bands", bands)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(f"{lo:g}-{hi:g}Hz" for lo, hi in bands))
        elif len(self.labels) != len(bands):
            raise ValidationError("band labels do not match bands")

    def __len__(self):
        return len(self.bands)

    def validate(self, sample_rate: float) -> None:
        nyquist = sample_rate / 2
        for lo, hi in self.bands:
            if hi > nyquist:
                raise ValidationError(f"band [{lo}, {hi}) exceeds Nyquist frequency {nyquist}")

    @classmethod
    def motor_imagery(cls) -> "BandSpec":
        return cls(MOTOR_IMAGERY_BANDS)

    @classmethod
    def named(cls) -> "BandSpec":
        return cls(tuple(NAMED_BANDS.values()), tuple(NAMED_BANDS))

    @classmethod
    def load(cls, path) -> "BandSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read band spec {path}: {exc}") from exc
        return cls(tuple(tuple(b) for b in data))


@dataclass(frozen=True)
class RawRecording:
    samples: np.ndarray  # (E, T)
    sample_rate: float
    channel_names: tuple
    montage: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] < 2:
            raise ValidationError("samples must be (E, T) with T >= 2")
        if not self.sample_rate > 0:
            raise ValidationError("sample_rate must be positive")
        names = tuple(self.channel_names)
        if len(names) != samples.shape[0]:
            raise ValidationError(f"{len(names)} channel names for {samples.shape[0]} channels")
        known = set(names)
        for ch, nbrs in self.montage.items():
            if ch not in known:
                raise ValidationError(f"montage references unknown channel {ch!r}")
            for nb in nbrs:
                if nb not in known:
                    raise ValidationError(f"montage neighbor {nb!r} of {ch!r} is not a channel")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


def laplacian_matrix(channel_names, montage) -> np.ndarray:
    index = {name: i for i, name in enumerate(channel_names)}
    L = np.eye(len(channel_names))
    for name in channel_names:
        nbrs = montage.get(name, [])
        if not nbrs:
            raise ValidationError(f"channel {name!r} has no neighbors in the montage")
        for nb in nbrs:
            L[index[name], index[nb]] -= 1.0 / len(nbrs)
    return L


def surface_laplacian(rec: RawRecording) -> RawRecording:
    """Subtract from each channel the unweighted mean of its montage neighbors."""
    L = laplacian_matrix(rec.channel_names, rec.montage)
    return RawRecording(L @ rec.samples, rec.sample_rate, rec.channel_names, rec.montage)


def band_power_spectrum(segment, sample_rate: float):
    """One-sided power per DFT bin of the Hanning-windowed segment.

    Normalised so the bins sum to ``sum((x*win)**2) / sum(win**2)``.
    Returns ``(freqs, power)``.
    """
    x = np.asarray(segment, dtype=float)
    T = x.size
    if T < 2:
        raise ValidationError("segment must have at least 2 samples")
    win = np.hanning(T)
    spec = np.fft.rfft(x * win)
    power = np.abs(spec) ** 2 / T
    # interior bins stand for both positive and negative frequencies
    if T % 2 == 0:
        power[1:-1] *= 2
    else:
        power[1:] *= 2
    power /= np.sum(win ** 2)
    return np.fft.rfftfreq(T, d=1.0 / sample_rate), power


def _band_mask(freqs, lo, hi, nyquist):
    mask = (freqs >= lo) & (freqs < hi)
    if hi >= nyquist:
        mask |= freqs == nyquist
    return mask


def log_bandpower(segment, sample_rate: float, bands: BandSpec, floor: float = POWER_FLOOR) -> np.ndarray:
    """Natural-log power summed over DFT bins whose centre lies in each half-open band.

    A band whose upper edge is the Nyquist frequency also takes the Nyquist bin.
    """
    bands.validate(sample_rate)
    freqs, power = band_power_spectrum(segment, sample_rate)
    out = np.empty(len(bands))
    for j, (lo, hi) in enumerate(bands.bands):
        mask = _band_mask(freqs, lo, hi, sample_rate / 2)
        if not mask.any():
            raise ValidationError(f"band [{lo:g}, {hi:g}) Hz contains no DFT bin at resolution "
                                  f"{sample_rate / np.asarray(segment).size:g} Hz")
        out[j] = np.log(power[mask].sum() + floor)
    return out


def extract_trial_features(rec: RawRecording, window, bands: BandSpec) -> np.ndarray:
    """``(E, F)`` log-bandpower matrix over ``window = (start_s, end_s)``, rows in channel order."""
    start, end = window
    i0 = int(round(start * rec.sample_rate))
    i1 = int(round(end * rec.sample_rate))
    if i0 < 0 or i1 > rec.n_samples or i1 - i0 < 2:
        raise ValidationError(f"window ({start}, {end}) s is outside the recording "
                              f"({rec.n_samples / rec.sample_rate:g} s)")
    seg = rec.samples[:, i0:i1]
    return np.stack([log_bandpower(ch, rec.sample_rate, bands) for ch in seg])


# --------------------------------------------------------------------------
# File formats


def read_recording_csv(path, montage=None) -> RawRecording:
    """CSV with header ``t,ch_0,...``; the sample rate comes from the time column."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    except (OSError, StopIteration, ValueError) as exc:
        raise ValidationError(f"cannot read recording {path}: {exc}") from exc
    if header[0] != "t" or data.ndim != 2 or data.shape[0] < 2:
        raise ValidationError(f"recording {path} must have a 't' column and at least 2 samples")
    dt = np.diff(data[:, 0])
    if np.any(dt <= 0):
        raise ValidationError(f"recording {path}: time column is not increasing")
    rate = 1.0 / float(np.median(dt))
    return RawRecording(data[:, 1:].T, rate, tuple(header[1:]), montage or {})


def write_recording_csv(rec: RawRecording, path) -> None:
    t = np.arange(rec.n_samples) / rec.sample_rate
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *rec.channel_names])
        for i in range(rec.n_samples):
            writer.writerow([repr(float(t[i]))] + [repr(float(v)) for v in rec.samples[:, i]])


def read_montage(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read montage {path}: {exc}") from exc
    return {str(k): [str(v) for v in vs] for k, vs in data.items()}
