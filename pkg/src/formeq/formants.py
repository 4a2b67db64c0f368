"""Formant estimation: LPC by autocorrelation/Levinson-Durbin plus root analysis.

Up to four resonances per frame.  Candidate roots are gated to reject pitch
harmonics and spectral-tilt poles (frequency above 90 Hz and below
Nyquist - 100 Hz, bandwidth below 700 Hz); a frame is valid only when
exactly four survive.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .features import AudioClip, frame_grid

DEFAULT_LPC_ORDER = 14
DEFAULT_PREEMPHASIS = 0.97
MAX_FORMANTS = 4
MIN_FREQ_HZ = 90.0
EDGE_MARGIN_HZ = 100.0
MAX_BANDWIDTH_HZ = 700.0


@dataclass
class FormantFrame:
    """(frequency, bandwidth) pairs in Hz, ascending; valid iff exactly four."""

    formants: list
    valid: bool

    def __post_init__(self):
        self.formants = [(float(f), float(b)) for f, b in self.formants]
        if len(self.formants) > MAX_FORMANTS:
            raise InputError("at most four formants per frame")
        last = 0.0
        for f, b in self.formants:
            if f <= last:
                raise InputError("formant frequencies must be strictly increasing and positive")
            if b <= 0.0:
                raise InputError("bandwidths must be positive")
            last = f
        if self.valid and len(self.formants) != MAX_FORMANTS:
            raise InputError("a valid frame carries exactly four formants")

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for f, _ in self.formants])

    @property
    def bandwidths(self) -> np.ndarray:
        return np.array([b for _, b in self.formants])


def invalid_frame() -> FormantFrame:
    return FormantFrame([], valid=False)


@dataclass
class FormantTrack:
    """Per-frame formant estimates aligned 1:1 with a feature sequence."""

    frames: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i) -> FormantFrame:
        return self.frames[i]

    @property
    def valid_fraction(self) -> float:
        if not self.frames:
            return 0.0
        return sum(1 for f in self.frames if f.valid) / len(self.frames)


# ---------------------------------------------------------------------------
# LPC
# ---------------------------------------------------------------------------

def _levinson(r: np.ndarray, order: int) -> np.ndarray:
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        if err <= 0.0:
            raise NumericalError("Levinson recursion lost positive prediction error")
        acc = r[i] + a[1:i] @ r[i - 1:0:-1]
        k = -acc / err
        prev = a[1:i].copy()
        a[1:i] = prev + k * prev[::-1]
        a[i] = k
        err *= 1.0 - k * k
    return a


def lpc_coeffs(frame: np.ndarray, order: int = DEFAULT_LPC_ORDER) -> np.ndarray:
    """LPC polynomial [1, a1..a_order] of a windowed frame.

    Autocorrelation method solved by Levinson-Durbin; any root on or outside
    the unit circle is reflected inside so the filter stays minimum-phase.
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("frame must be one-dimensional")
    if len(x) <= order:
        raise InputError("frame shorter than the LPC order")
    r = np.array([x[:len(x) - k] @ x[k:] for k in range(order + 1)])
    if r[0] <= 0.0:
        raise NumericalError("silent frame")
    a = _levinson(r, order)
    roots = np.roots(a)
    mags = np.abs(roots)
    if np.any(mags >= 1.0):
        roots = np.where(mags >= 1.0, roots / (mags * mags), roots)
        a = np.real(np.poly(roots))
    return a


def formants_from_lpc(coeffs: np.ndarray, sample_rate: int) -> FormantFrame:
    """Resonances from LPC roots: freq = (fs/2pi)*arg(r), bw = -(fs/pi)*ln|r|."""
    roots = np.roots(np.asarray(coeffs, dtype=np.float64))
    roots = roots[roots.imag > 0.0]
    nyquist = sample_rate / 2.0
    freqs = np.arctan2(roots.imag, roots.real) * sample_rate / (2.0 * np.pi)
    bws = -(sample_rate / np.pi) * np.log(np.abs(roots))
    keep = (freqs > MIN_FREQ_HZ) & (freqs < nyquist - EDGE_MARGIN_HZ) \
        & (bws > 0.0) & (bws < MAX_BANDWIDTH_HZ)
    cand = sorted(zip(freqs[keep], bws[keep]))
    chosen = []
    last = 0.0
    for f, b in cand:
        if f > last:
            chosen.append((f, b))
            last = f
        if len(chosen) == MAX_FORMANTS:
            break
    return FormantFrame(chosen, valid=len(chosen) == MAX_FORMANTS)


def preemphasize(samples: np.ndarray, coefficient: float = DEFAULT_PREEMPHASIS) -> np.ndarray:
    y = np.asarray(samples, dtype=np.float64).copy()
    y[1:] -= coefficient * y[:-1]
    return y


def track_formants(clip: AudioClip,
                   frame_shift_s: float,
                   frame_len_s: float,
                   order: int = DEFAULT_LPC_ORDER,
                   preemphasis: float = DEFAULT_PREEMPHASIS) -> FormantTrack:
    """Formants on the same frame grid as stft_analyze; per-frame failures
    downgrade to invalid frames instead of raising."""
    hop, flen, n_frames = frame_grid(len(clip), clip.sample_rate, frame_shift_s, frame_len_s)
    emphasized = preemphasize(clip.samples, preemphasis)
    window = np.hanning(flen)
    frames = []
    for i in range(n_frames):
        seg = emphasized[i * hop:i * hop + flen] * window
        try:
            frame = formants_from_lpc(lpc_coeffs(seg, order), clip.sample_rate)
        except NumericalError:
            frame = invalid_frame()
        frames.append(frame)
    return FormantTrack(frames)


# ---------------------------------------------------------------------------
# CSV interchange: frame,f1,b1,f2,b2,f3,b3,f4,b4,valid
# ---------------------------------------------------------------------------

_CSV_HEADER = ["frame", "f1", "b1", "f2", "b2", "f3", "b3", "f4", "b4", "valid"]


def save_formant_track(path, track: FormantTrack) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_CSV_HEADER)
        for i, frame in enumerate(track.frames):
            cells = [str(i)]
            for k in range(MAX_FORMANTS):
                if k < len(frame.formants):
                    fk, bk = frame.formants[k]
                    cells += [repr(fk), repr(bk)]
                else:
                    cells += ["", ""]
            cells.append("1" if frame.valid else "0")
            writer.writerow(cells)


def load_formant_track(path) -> FormantTrack:
    frames = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise InputError(f"{path}: not a formant track file")
        for row in reader:
            pairs = []
            for k in range(MAX_FORMANTS):
                fs, bs = row[1 + 2 * k], row[2 + 2 * k]
                if fs == "" or bs == "":
                    break
                pairs.append((float(fs), float(bs)))
            frames.append(FormantFrame(pairs, valid=row[-1] == "1"))
    return FormantTrack(frames)
