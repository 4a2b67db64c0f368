"""Dynamic frequency warping anchored on formant correspondences.

A warp is a strictly increasing piecewise-linear bijection of [0, Nyquist]
onto itself.  Anchors come from matched formant centers and from the
bandwidth edges f +- b/2 on each side; candidates that would break strict
monotonicity are dropped, centers taking priority over edges.

Equalization warps each aligned target spectrum onto the source formant
locations before mapper training.  A pair whose warped target ends up
farther from the source than the unwarped one (by mel-cepstral distortion)
is treated as a formant-estimation error and removed from training.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .alignment import AlignedPair
from .features import LogSpectrum, McepFrame, logspec_from_mcep, mcep_from_logspec, mel_cd
from .formants import FormantFrame

EQUALIZED = "equalized"
IDENTITY = "identity"
REJECTED = "rejected"


@dataclass
class WarpFunction:
    """Monotone piecewise-linear frequency map defined by (f_in, f_out) anchors."""

    anchors: np.ndarray

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        if self.anchors.ndim != 2 or self.anchors.shape[1] != 2 or len(self.anchors) < 2:
            raise InputError("anchors must be a K x 2 array with K >= 2")
        if self.anchors[0, 0] != 0.0 or self.anchors[0, 1] != 0.0:
            raise InputError("warp must be pinned at (0, 0)")
        if self.anchors[-1, 0] != self.anchors[-1, 1]:
            raise InputError("warp must be pinned at (Nyquist, Nyquist)")
        if np.any(np.diff(self.anchors[:, 0]) <= 0) or np.any(np.diff(self.anchors[:, 1]) <= 0):
            raise InputError("anchors must be strictly increasing in both coordinates")

    @property
    def nyquist(self) -> float:
        return float(self.anchors[-1, 0])

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.anchors[:, 0], self.anchors[:, 1]))

    def __call__(self, freq):
        return np.interp(freq, self.anchors[:, 0], self.anchors[:, 1])

    def inverse(self, freq):
        return np.interp(freq, self.anchors[:, 1], self.anchors[:, 0])


def identity_warp(nyquist: float) -> WarpFunction:
    return WarpFunction(np.array([[0.0, 0.0], [nyquist, nyquist]]))


def build_warp(from_frame: FormantFrame, to_frame: FormantFrame, nyquist: float) -> WarpFunction:
    """Warp mapping from_frame's formant layout onto to_frame's.

    Center anchors map matched formant frequencies; edge anchors map the
    matched bandwidth edges.  Candidates outside (0, Nyquist) or violating
    strict monotonicity are dropped greedily left to right, edge anchors
    only ever filling gaps the centers left.
    """
    if not (from_frame.valid and to_frame.valid):
        raise InputError("both formant frames must be valid")

    centers = []
    edges = []
    for (f_a, b_a), (f_b, b_b) in zip(from_frame.formants, to_frame.formants):
        centers.append((f_a, f_b))
        edges.append((f_a - b_a / 2.0, f_b - b_b / 2.0))
        edges.append((f_a + b_a / 2.0, f_b + b_b / 2.0))

    anchors = [(0.0, 0.0)]
    for f_in, f_out in sorted(centers):
        last_in, last_out = anchors[-1]
        if last_in < f_in < nyquist and last_out < f_out < nyquist:
            anchors.append((f_in, f_out))
    anchors.append((nyquist, nyquist))

    for f_in, f_out in sorted(edges):
        if not (0.0 < f_in < nyquist and 0.0 < f_out < nyquist):
            continue
        pos = bisect_left(anchors, (f_in, f_out))
        lo_in, lo_out = anchors[pos - 1]
        hi_in, hi_out = anchors[pos]
        if lo_in < f_in < hi_in and lo_out < f_out < hi_out:
            anchors.insert(pos, (f_in, f_out))

    return WarpFunction(np.array(anchors))


def apply_dfw(spec: LogSpectrum, warp: WarpFunction) -> LogSpectrum:
    """Warp a log spectrum: the output bin at frequency f takes the input
    value at warp^-1(f), linearly interpolated.  Identity warps pass the
    input through bit-exactly."""
    if warp.is_identity:
        return LogSpectrum(spec.bins.copy(), spec.fft_size)
    grid = np.linspace(0.0, warp.nyquist, len(spec.bins))
    source_freqs = warp.inverse(grid)
    return LogSpectrum(np.interp(source_freqs, grid, spec.bins), spec.fft_size)


def invert_warp(warp: WarpFunction) -> WarpFunction:
    """Swap anchor coordinates; an exact involution."""
    return WarpFunction(warp.anchors[:, ::-1].copy())


# ---------------------------------------------------------------------------
# formant equalization of aligned pairs
# ---------------------------------------------------------------------------

@dataclass
class EqualizeResult:
    status: str                     # EQUALIZED, IDENTITY, or REJECTED
    pair: AlignedPair
    target_mcep: np.ndarray | None  # equalized target frame; None when rejected
    melcd_before: float
    melcd_after: float


def equalize_pair(pair: AlignedPair) -> EqualizeResult:
    """Warp the target spectrum onto the source formant locations.

    Pairs lacking reliable formants on either side keep the unwarped target
    (IDENTITY).  Pairs whose warped target is farther from the source than
    the unwarped one are REJECTED as formant-estimation errors.
    """
    alpha = pair.alpha
    order = len(pair.mcep_x) - 1
    m_x = McepFrame(pair.mcep_x.copy(), alpha=alpha)
    m_y = McepFrame(pair.mcep_y.copy(), alpha=alpha)
    before = mel_cd(m_x, m_y)
    if pair.skip_warp:
        return EqualizeResult(IDENTITY, pair, pair.mcep_y.copy(), before, before)

    nyquist = pair.sample_rate / 2.0
    warp = build_warp(pair.formants_y, pair.formants_x, nyquist)
    warped_spec = apply_dfw(LogSpectrum(pair.spec_y.copy()), warp)
    m_bar = mcep_from_logspec(warped_spec, order=order, alpha=alpha)
    m_bar.coeffs[0] = pair.mcep_y[0]  # warping must not change frame energy
    after = mel_cd(m_x, m_bar)
    if after > before:
        return EqualizeResult(REJECTED, pair, None, before, after)
    return EqualizeResult(EQUALIZED, pair, m_bar.coeffs, before, after)


@dataclass
class EqualizedCorpus:
    """Retained training pairs and the equalization bookkeeping."""

    source_mceps: np.ndarray        # (n_retained, order+1)
    target_mceps: np.ndarray        # (n_retained, order+1), equalized
    results: list
    counts: dict
    mean_melcd_before: float        # over all input pairs, unwarped
    mean_melcd_after: float         # over retained pairs, final frames

    def report(self) -> dict:
        return {
            "equalized": self.counts[EQUALIZED],
            "identity": self.counts[IDENTITY],
            "rejected": self.counts[REJECTED],
            "mean_melcd_before": self.mean_melcd_before,
            "mean_melcd_after": self.mean_melcd_after,
        }

    @property
    def retained(self) -> list:
        return [r for r in self.results if r.status != REJECTED]


def equalize_corpus(pairs: list) -> EqualizedCorpus:
    if not pairs:
        raise InputError("no aligned pairs to equalize")
    results = [equalize_pair(p) for p in pairs]
    counts = {EQUALIZED: 0, IDENTITY: 0, REJECTED: 0}
    for r in results:
        counts[r.status] += 1
    retained = [r for r in results if r.status != REJECTED]
    if not retained:
        raise InputError("every pair was rejected during equalization")
    x = np.array([r.pair.mcep_x for r in retained])
    y = np.array([r.target_mcep for r in retained])
    before = float(np.mean([r.melcd_before for r in results]))
    after = float(np.mean([r.melcd_after for r in retained]))
    return EqualizedCorpus(x, y, results, counts, before, after)
