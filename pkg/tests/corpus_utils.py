"""Synthetic two-speaker parallel corpus for tests.

Utterances are sequences of vowel-like segments: a pulse train with a
glottal-style -6 dB/oct tilt plus a little noise, run through a cascade of
four second-order resonators.  The "target speaker" renders the same
segment sequence with time-scaled durations and with formant locations
moved by a systematic speaker warp times a per-utterance jitter, which is
exactly the one-to-many structure the toolkit is built to remove:
identical source content maps to targets whose formant layouts differ from
utterance to utterance.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from formeq import features as ft
from formeq.pipeline import CorpusManifest, save_manifest

SAMPLE_RATE = 16000

# (frequencies, bandwidths) per vowel, roughly /a e i o u/
VOWELS = [
    ((730.0, 1090.0, 2440.0, 3400.0), (90.0, 110.0, 160.0, 220.0)),
    ((530.0, 1840.0, 2480.0, 3520.0), (80.0, 120.0, 150.0, 200.0)),
    ((390.0, 1990.0, 2850.0, 3700.0), (70.0, 100.0, 160.0, 210.0)),
    ((570.0, 840.0, 2410.0, 3300.0), (80.0, 100.0, 140.0, 230.0)),
    ((440.0, 1020.0, 2240.0, 3620.0), (70.0, 110.0, 150.0, 200.0)),
]

# systematic source-to-target formant ratio (the "speaker difference") and
# the per-utterance jitter around it (the one-to-many component)
SPEAKER_WARP = np.array([1.12, 1.10, 1.08, 1.06])
UTTERANCE_JITTER = 0.06
SEGMENT_JITTER = 0.03


def resonator_cascade(excitation: np.ndarray, freqs, bws, fs=SAMPLE_RATE) -> np.ndarray:
    x = excitation
    for f, b in zip(freqs, bws):
        r = np.exp(-np.pi * b / fs)
        x = lfilter([1.0], [1.0, -2.0 * r * np.cos(2.0 * np.pi * f / fs), r * r], x)
    return x


def glottal_excitation(n: int, f0: float, rng: np.random.Generator,
                       noise_mix: float = 0.05, fs=SAMPLE_RATE) -> np.ndarray:
    pulses = np.zeros(n)
    period = max(2, int(round(fs / f0)))
    pulses[::period] = 1.0
    raw = pulses + noise_mix * rng.normal(size=n)
    # -6 dB/oct tilt; the default analysis pre-emphasis undoes it
    return lfilter([1.0], [1.0, -0.97], raw)


def synth_segments(segments: list, rng: np.random.Generator, f0: float,
                   fs=SAMPLE_RATE) -> np.ndarray:
    """segments: list of (freqs, bws, duration_s)."""
    pieces = []
    for freqs, bws, dur in segments:
        n = int(round(dur * fs))
        piece = resonator_cascade(glottal_excitation(n, f0, rng), freqs, bws, fs)
        pieces.append(piece)
    x = np.concatenate(pieces)
    return x / np.max(np.abs(x)) * 0.7


def utterance_script(rng: np.random.Generator, n_segments=(4, 7)) -> list:
    """(vowel index, duration, per-segment formant jitter) per segment."""
    count = int(rng.integers(*n_segments))
    script = []
    for _ in range(count):
        vowel = int(rng.integers(len(VOWELS)))
        dur = float(rng.uniform(0.16, 0.26))
        jitter = rng.uniform(1.0 - SEGMENT_JITTER, 1.0 + SEGMENT_JITTER, size=4)
        script.append((vowel, dur, jitter))
    return script


def render_pair(script: list, rng: np.random.Generator, fs=SAMPLE_RATE):
    """Source and target renderings of one script; returns (src, tgt) arrays."""
    utt_warp = SPEAKER_WARP * rng.uniform(1.0 - UTTERANCE_JITTER,
                                          1.0 + UTTERANCE_JITTER, size=4)
    bw_scale = rng.uniform(0.9, 1.15, size=4)
    f0_src = float(rng.uniform(100.0, 125.0))
    f0_tgt = f0_src * float(rng.uniform(1.05, 1.25))

    src_segments, tgt_segments = [], []
    for vowel, dur, jitter in script:
        freqs = np.asarray(VOWELS[vowel][0]) * jitter
        bws = np.asarray(VOWELS[vowel][1])
        src_segments.append((freqs, bws, dur))
        tgt_freqs = np.sort(freqs * utt_warp)
        tgt_dur = dur * float(rng.uniform(0.85, 1.15))
        tgt_segments.append((tgt_freqs, bws * bw_scale, tgt_dur))
    src = synth_segments(src_segments, rng, f0_src, fs)
    tgt = synth_segments(tgt_segments, rng, f0_tgt, fs)
    return src, tgt


def make_parallel_corpus(directory, n_utterances: int, seed: int,
                         fs=SAMPLE_RATE) -> CorpusManifest:
    """Write WAV pairs plus a manifest.csv under directory; deterministic."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for u in range(n_utterances):
        src, tgt = render_pair(utterance_script(rng), rng, fs)
        src_name = f"utt{u:03d}_src.wav"
        tgt_name = f"utt{u:03d}_tgt.wav"
        ft.write_wav(directory / src_name, ft.AudioClip(src, fs))
        ft.write_wav(directory / tgt_name, ft.AudioClip(tgt, fs))
        entries.append((src_name, tgt_name, f"utt{u:03d}"))
    manifest_path = directory / "manifest.csv"
    save_manifest(manifest_path, CorpusManifest(entries))
    # reload so entries carry directory-resolved paths
    from formeq.pipeline import load_manifest
    return load_manifest(manifest_path)


def steady_vowel(vowel: int, duration: float, seed: int, fs=SAMPLE_RATE) -> ft.AudioClip:
    """A single sustained vowel, handy for formant-recovery tests."""
    rng = np.random.default_rng(seed)
    freqs, bws = VOWELS[vowel]
    x = synth_segments([(np.asarray(freqs), np.asarray(bws), duration)], rng, 115.0, fs)
    return ft.AudioClip(x, fs)
