"""Spectral features: STFT analysis, mel-cepstra and mel-cepstral distortion.

Log-magnitude spectra live on the linear frequency axis [0, Nyquist] with
fft_size/2 + 1 bins.  Mel-cepstra are the truncated real cepstrum of the
spectrum resampled onto the first-order all-pass warped axis; with the
convention used here a frame reconstructs as

    log S(w) = c[0] + 2 * sum_{m=1..order} c[m] * cos(m * warp(w))

which makes mel-cepstral distortion equal to the RMS log-spectral
difference of the truncated representation, in dB.
"""

from __future__ import annotations

import json
import struct
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_FRAME_SHIFT = 0.005
DEFAULT_FRAME_LEN = 0.025
DEFAULT_ORDER = 39
DEFAULT_ALPHA = 0.42

# magnitude floor applied before taking logs; ln(1e-10) ~ -23.03
SPECTRAL_FLOOR = 1e-10

KIND_MCEP = "mcep"
KIND_LOGSPEC = "logspec"

_DB_SCALE = 10.0 / np.log(10.0)

VCF1_MAGIC = b"VCF1"


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class AudioClip:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError("audio must be a single channel")
        if self.sample_rate <= 0:
            raise InputError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("audio contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class LogSpectrum:
    """Natural-log magnitude spectrum on the linear axis, fft_size/2+1 bins."""

    bins: np.ndarray
    fft_size: int = 0

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        if self.bins.ndim != 1:
            raise InputError("spectrum must be one-dimensional")
        if self.fft_size == 0:
            self.fft_size = 2 * (len(self.bins) - 1)
        if len(self.bins) != self.fft_size // 2 + 1:
            raise InputError("bin count must be fft_size/2 + 1")
        if not np.all(np.isfinite(self.bins)):
            raise InputError("spectrum contains non-finite bins")


@dataclass
class McepFrame:
    """Mel-cepstral coefficients c0..c_order for one frame."""

    coeffs: np.ndarray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 1 or len(self.coeffs) < 2:
            raise InputError("need at least c0 and c1")
        if not np.all(np.isfinite(self.coeffs)):
            raise InputError("coefficients contain non-finite values")
        if not 0.0 <= self.alpha < 1.0:
            raise InputError("alpha must lie in [0, 1)")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1


@dataclass
class FeatureSequence:
    """Frames of equal-dimension vectors on a fixed time grid.

    kind is "mcep" (rows are c0..c_order) or "logspec" (rows are
    log-magnitude bins).  alpha/order are only meaningful for mceps.
    """

    frames: np.ndarray
    frame_shift: float = DEFAULT_FRAME_SHIFT
    kind: str = KIND_MCEP
    sample_rate: int = DEFAULT_SAMPLE_RATE
    alpha: float | None = None
    order: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise InputError("frames must form an N x D matrix")
        if self.frame_shift <= 0:
            raise InputError("frame shift must be positive")
        if self.kind not in (KIND_MCEP, KIND_LOGSPEC):
            raise InputError(f"unknown feature kind {self.kind!r}")
        if not np.all(np.isfinite(self.frames)):
            raise InputError("frames contain non-finite values")

    def __len__(self):
        return len(self.frames)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def fft_size(self) -> int:
        if self.kind != KIND_LOGSPEC:
            raise InputError("fft_size only defined for log-spectra")
        return 2 * (self.dim - 1)

    def mcep_frame(self, i: int) -> McepFrame:
        if self.kind != KIND_MCEP:
            raise InputError("not a mel-cepstral sequence")
        return McepFrame(self.frames[i].copy(), alpha=self.alpha if self.alpha is not None else DEFAULT_ALPHA)

    def log_spectrum(self, i: int) -> LogSpectrum:
        if self.kind != KIND_LOGSPEC:
            raise InputError("not a log-spectrum sequence")
        return LogSpectrum(self.frames[i].copy())


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def frame_grid(n_samples: int, sample_rate: int, frame_shift_s: float, frame_len_s: float):
    """Shared framing used by STFT and formant tracking: (hop, frame_len, n_frames)."""
    hop = int(round(frame_shift_s * sample_rate))
    flen = int(round(frame_len_s * sample_rate))
    if hop < 1 or flen < 1:
        raise InputError("frame shift and length must span at least one sample")
    if flen < hop:
        raise InputError("frame length must be at least the frame shift")
    if n_samples < flen:
        raise InputError("clip shorter than one analysis window")
    n_frames = (n_samples - flen) // hop + 1
    return hop, flen, n_frames


def stft_analyze(clip: AudioClip,
                 frame_shift_s: float = DEFAULT_FRAME_SHIFT,
                 frame_len_s: float = DEFAULT_FRAME_LEN) -> FeatureSequence:
    """Hann-windowed log-magnitude STFT, one frame per hop.

    fft_size is the next power of two at or above the window length;
    magnitudes are floored at SPECTRAL_FLOOR before the log.
    """
    if len(clip) == 0:
        raise InputError("empty clip")
    hop, flen, n_frames = frame_grid(len(clip), clip.sample_rate, frame_shift_s, frame_len_s)
    fft_size = next_pow2(flen)
    window = np.hanning(flen)
    out = np.empty((n_frames, fft_size // 2 + 1))
    for i in range(n_frames):
        seg = clip.samples[i * hop:i * hop + flen] * window
        mag = np.abs(np.fft.rfft(seg, n=fft_size))
        out[i] = np.log(np.maximum(mag, SPECTRAL_FLOOR))
    return FeatureSequence(out, frame_shift=frame_shift_s, kind=KIND_LOGSPEC,
                           sample_rate=clip.sample_rate)


# ---------------------------------------------------------------------------
# mel-cepstrum
# ---------------------------------------------------------------------------

def allpass_warp(omega: np.ndarray, alpha: float) -> np.ndarray:
    """First-order all-pass phase: maps [0, pi] monotonically onto itself."""
    omega = np.asarray(omega, dtype=np.float64)
    return omega + 2.0 * np.arctan2(alpha * np.sin(omega), 1.0 - alpha * np.cos(omega))


@lru_cache(maxsize=16)
def _warp_knots(n_bins: int, alpha: float) -> np.ndarray:
    return allpass_warp(np.linspace(0.0, np.pi, n_bins), alpha)


@lru_cache(maxsize=16)
def _cosine_basis(n_bins: int, order: int, alpha: float) -> np.ndarray:
    """cos(m * warp(w)) on the linear grid, m = 1..order; (n_bins, order)."""
    omega_t = _warp_knots(n_bins, alpha)
    return np.cos(np.outer(omega_t, np.arange(1, order + 1)))


@lru_cache(maxsize=16)
def _resample_weights(n_bins: int, alpha: float):
    """Linear-interpolation stencil taking samples at the warped knot
    positions onto the uniform warped-axis grid."""
    knots = _warp_knots(n_bins, alpha)
    targets = np.linspace(0.0, np.pi, n_bins)
    right = np.clip(np.searchsorted(knots, targets, side="right"), 1, n_bins - 1)
    left = right - 1
    t = (targets - knots[left]) / (knots[right] - knots[left])
    return left, right, t


_REFINE_ITERS = 10


def _resample_rows(rows: np.ndarray, left, right, t) -> np.ndarray:
    return rows[:, left] + (rows[:, right] - rows[:, left]) * t


def _series_rows(coeffs: np.ndarray, alpha: float, n_bins: int) -> np.ndarray:
    basis = _cosine_basis(n_bins, coeffs.shape[1] - 1, alpha)
    return coeffs[:, :1] + 2.0 * (coeffs[:, 1:] @ basis.T)


def _mcep_rows(bins_rows: np.ndarray, order: int, alpha: float) -> np.ndarray:
    """Mel-cepstra of a batch of log spectra; the single shared code path.

    One pass resamples the spectrum onto a uniform grid of the warped axis
    by linear interpolation and takes the truncated real cepstrum (inverse
    DCT-I), c0..c_order.  Linear resampling slightly attenuates the
    coefficients (about (m * d)^2 / 12 relatively, d being the warped-axis
    knot spacing), so the same pass is re-applied to the reconstruction
    residual a fixed number of times; on spectra exactly representable by
    the truncated series this converges to the exact coefficients.  With
    alpha = 0 the resampling is the identity and the result is exactly the
    plain truncated cepstrum of the input samples.
    """
    n_bins = bins_rows.shape[1]
    fft_size = 2 * (n_bins - 1)
    if alpha == 0.0:
        return np.fft.irfft(bins_rows, n=fft_size, axis=1)[:, :order + 1]
    left, right, t = _resample_weights(n_bins, alpha)
    warped = _resample_rows(bins_rows, left, right, t)
    coeffs = np.fft.irfft(warped, n=fft_size, axis=1)[:, :order + 1]
    for _ in range(_REFINE_ITERS):
        residual = bins_rows - _series_rows(coeffs, alpha, n_bins)
        warped = _resample_rows(residual, left, right, t)
        coeffs = coeffs + np.fft.irfft(warped, n=fft_size, axis=1)[:, :order + 1]
    return coeffs


def mcep_from_logspec(spec: LogSpectrum, order: int = DEFAULT_ORDER,
                      alpha: float = DEFAULT_ALPHA) -> McepFrame:
    """Mel-cepstrum of one log spectrum; see _mcep_rows for the method."""
    if order < 1:
        raise InputError("order must be at least 1")
    if order + 1 > len(spec.bins):
        raise InputError("order must be below the bin count")
    return McepFrame(_mcep_rows(spec.bins[None, :], order, alpha)[0], alpha=alpha)


def logspec_from_mcep(frame: McepFrame, fft_size: int) -> LogSpectrum:
    """Evaluate the warped-cosine series on the linear frequency grid."""
    if fft_size < 2 * (frame.order + 1):
        raise InputError("fft_size too small for the cepstral order")
    n_bins = fft_size // 2 + 1
    return LogSpectrum(_series_rows(frame.coeffs[None, :], frame.alpha, n_bins)[0], fft_size)


def mcep_analyze(spec_seq: FeatureSequence, order: int = DEFAULT_ORDER,
                 alpha: float = DEFAULT_ALPHA) -> FeatureSequence:
    """Per-frame mel-cepstra of a log-spectrum sequence."""
    if spec_seq.kind != KIND_LOGSPEC:
        raise InputError("expected a log-spectrum sequence")
    if order < 1 or order + 1 > spec_seq.dim:
        raise InputError("order must be at least 1 and below the bin count")
    rows = _mcep_rows(spec_seq.frames, order, alpha)
    return FeatureSequence(rows, frame_shift=spec_seq.frame_shift, kind=KIND_MCEP,
                           sample_rate=spec_seq.sample_rate, alpha=alpha, order=order)


# ---------------------------------------------------------------------------
# mel-cepstral distortion
# ---------------------------------------------------------------------------

def mel_cd(a: McepFrame, b: McepFrame) -> float:
    """Mel-cepstral distortion in dB; c0 (energy) is excluded."""
    if a.order != b.order:
        raise InputError("cepstral orders differ")
    diff = a.coeffs[1:] - b.coeffs[1:]
    return _DB_SCALE * np.sqrt(2.0 * np.dot(diff, diff))


def mel_cd_frames(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise mel-cepstral distortion of two N x (order+1) matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError("matrix shapes differ")
    diff = a[:, 1:] - b[:, 1:]
    return _DB_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=1))


# ---------------------------------------------------------------------------
# WAV ingest (PCM 16-bit mono little-endian RIFF)
# ---------------------------------------------------------------------------

def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise InputError(f"{path}: expected mono audio")
        if w.getsampwidth() != 2:
            raise InputError(f"{path}: expected 16-bit PCM")
        if w.getcomptype() != "NONE":
            raise InputError(f"{path}: expected uncompressed PCM")
        sample_rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(samples, sample_rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# VCF1 feature files
# ---------------------------------------------------------------------------
# magic "VCF1", u32-LE dim, u32-LE frame count, f32-LE row-major frames,
# then a u32-LE length-prefixed UTF-8 JSON metadata blob.

def save_features(path, seq: FeatureSequence, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": seq.kind,
        "frame_shift": seq.frame_shift,
        "sample_rate": seq.sample_rate,
        "alpha": seq.alpha,
        "order": seq.order,
    }
    if extra_meta:
        meta.update(extra_meta)
    blob = json.dumps(meta).encode("utf-8")
    n, d = seq.frames.shape
    with open(path, "wb") as f:
        f.write(VCF1_MAGIC)
        f.write(struct.pack("<II", d, n))
        f.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_features(path, return_meta: bool = False):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VCF1_MAGIC:
            raise InputError(f"{path}: not a VCF1 feature file")
        dim, n_frames = struct.unpack("<II", f.read(8))
        body = f.read(4 * dim * n_frames)
        if len(body) != 4 * dim * n_frames:
            raise InputError(f"{path}: truncated frame data")
        (blob_len,) = struct.unpack("<I", f.read(4))
        blob = f.read(blob_len)
        if len(blob) != blob_len:
            raise InputError(f"{path}: truncated metadata")
    meta = json.loads(blob.decode("utf-8"))
    frames = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(n_frames, dim)
    seq = FeatureSequence(frames,
                          frame_shift=float(meta["frame_shift"]),
                          kind=meta["kind"],
                          sample_rate=int(meta["sample_rate"]),
                          alpha=meta.get("alpha"),
                          order=meta.get("order"))
    if return_meta:
        return seq, meta
    return seq
