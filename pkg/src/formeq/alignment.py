"""Dynamic time warping of parallel feature sequences and frame pairing."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError
from .features import FeatureSequence
from .formants import FormantFrame, FormantTrack

_STEPS = ((-1, -1), (-1, 0), (0, -1))  # preference order: diagonal, advance source, advance target


@dataclass
class AlignmentPath:
    """Monotone (source, target) index pairs from (0,0) to (N-1, M-1)."""

    pairs: list

    def __post_init__(self):
        if not self.pairs:
            raise InputError("empty alignment path")
        if tuple(self.pairs[0]) != (0, 0):
            raise InputError("path must start at (0, 0)")
        for (i0, j0), (i1, j1) in zip(self.pairs, self.pairs[1:]):
            di, dj = i1 - i0, j1 - j0
            if (di, dj) not in ((1, 0), (0, 1), (1, 1)):
                raise InputError("path steps must increment i, j, or both by one")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def dtw_align(src: FeatureSequence, tgt: FeatureSequence):
    """Minimum-cost monotone alignment under steps {(1,0),(0,1),(1,1)}.

    The local distance is the Euclidean distance over c1..c_order (c0 is
    excluded so energy differences do not drive the alignment).  Ties prefer
    the diagonal step, then advancing the source.  Returns (path, cost).
    """
    if len(src) == 0 or len(tgt) == 0:
        raise InputError("cannot align an empty sequence")
    if src.dim != tgt.dim:
        raise InputError("feature dimensions differ")
    a = src.frames[:, 1:]
    b = tgt.frames[:, 1:]
    n, m = len(a), len(b)
    cost = cdist(a, b)

    acc = np.full((n, m), np.inf)
    back = np.zeros((n, m), dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        back[0, j] = 2
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        back[i, 0] = 1
        row = acc[i]
        prev = acc[i - 1]
        crow = cost[i]
        brow = back[i]
        for j in range(1, m):
            best = prev[j - 1]
            move = 0
            if prev[j] < best:
                best = prev[j]
                move = 1
            if row[j - 1] < best:
                best = row[j - 1]
                move = 2
            row[j] = best + crow[j]
            brow[j] = move

    pairs = []
    i, j = n - 1, m - 1
    while True:
        pairs.append((i, j))
        if i == 0 and j == 0:
            break
        di, dj = _STEPS[back[i, j]]
        i, j = i + di, j + dj
    pairs.reverse()
    return AlignmentPath(pairs), float(acc[n - 1, m - 1])


@dataclass
class AlignedPair:
    """One aligned source/target frame with its spectra and formants."""

    src_index: int
    tgt_index: int
    mcep_x: np.ndarray
    mcep_y: np.ndarray
    spec_x: np.ndarray
    spec_y: np.ndarray
    formants_x: FormantFrame
    formants_y: FormantFrame
    skip_warp: bool
    sample_rate: int
    alpha: float


def pair_frames(path: AlignmentPath,
                src_mcep: FeatureSequence, tgt_mcep: FeatureSequence,
                src_spec: FeatureSequence, tgt_spec: FeatureSequence,
                src_track: FormantTrack, tgt_track: FormantTrack) -> list:
    """One AlignedPair per path step; pairs with an invalid formant frame on
    either side are flagged skip_warp."""
    for seq, track, side in ((src_mcep, src_track, "source"), (tgt_mcep, tgt_track, "target")):
        if len(seq) != len(track):
            raise InputError(f"{side} formant track length does not match features")
    if len(src_mcep) != len(src_spec) or len(tgt_mcep) != len(tgt_spec):
        raise InputError("mcep and log-spectrum sequences differ in length")
    alpha = src_mcep.alpha if src_mcep.alpha is not None else 0.42
    pairs = []
    for i, j in path:
        fx = src_track[i]
        fy = tgt_track[j]
        pairs.append(AlignedPair(
            src_index=i, tgt_index=j,
            mcep_x=src_mcep.frames[i], mcep_y=tgt_mcep.frames[j],
            spec_x=src_spec.frames[i], spec_y=tgt_spec.frames[j],
            formants_x=fx, formants_y=fy,
            skip_warp=not (fx.valid and fy.valid),
            sample_rate=src_mcep.sample_rate,
            alpha=alpha,
        ))
    return pairs


# ---------------------------------------------------------------------------
# CSV interchange: src_index,tgt_index
# ---------------------------------------------------------------------------

def save_alignment(path, alignment: AlignmentPath) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["src_index", "tgt_index"])
        writer.writerows(alignment.pairs)


def load_alignment(path) -> AlignmentPath:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["src_index", "tgt_index"]:
            raise InputError(f"{path}: not an alignment file")
        pairs = [(int(r[0]), int(r[1])) for r in reader]
    return AlignmentPath(pairs)
