"""End-to-end orchestration: training, conversion, evaluation, resynthesis.

Training: analyze both sides of every parallel utterance, time-align,
equalize the target formant locations to the source, reject
formant-error pairs, then fit the main mel-cepstral mixture and the
formant-predictor mixture on the retained pairs.

Conversion: map each source frame through the main mixture, then warp the
result from the measured source formant locations to the predicted target
locations, undoing the equalization.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import InputError, NumericalError
from . import complexity as cx
from . import features as ft
from . import formants as fm
from . import gmm
from .alignment import dtw_align, pair_frames
from .warping import apply_dfw, build_warp, equalize_corpus


@dataclass
class AnalysisConfig:
    """Analysis and training constants; echoed verbatim into model files."""

    sample_rate: int = ft.DEFAULT_SAMPLE_RATE
    frame_shift: float = ft.DEFAULT_FRAME_SHIFT
    frame_len: float = ft.DEFAULT_FRAME_LEN
    order: int = ft.DEFAULT_ORDER
    alpha: float = ft.DEFAULT_ALPHA
    lpc_order: int = fm.DEFAULT_LPC_ORDER
    preemphasis: float = fm.DEFAULT_PREEMPHASIS
    q_main: int = 32
    q_formant: int = 8
    sigma: float = cx.DEFAULT_SIGMA
    seed: int = 0
    em_max_iter: int = 100
    em_rel_tol: float = 1e-6

    @property
    def fft_size(self) -> int:
        return ft.next_pow2(int(round(self.frame_len * self.sample_rate)))

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fft_size"] = self.fft_size
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        d = dict(d)
        d.pop("fft_size", None)
        return cls(**d)


@dataclass
class CorpusManifest:
    """Parallel corpus listing: (source wav, target wav, utterance id)."""

    entries: list

    def __post_init__(self):
        if not self.entries:
            raise InputError("manifest is empty")
        for src, tgt, utt in self.entries:
            if src == tgt:
                raise InputError(f"utterance {utt}: source and target paths are identical")

    def __len__(self):
        return len(self.entries)


MANIFEST_HEADER = ["src_wav", "tgt_wav", "utt_id"]


def load_manifest(path) -> CorpusManifest:
    base = Path(path).parent
    entries = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise InputError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            if len(row) != 3:
                raise InputError(f"{path}: malformed manifest row {row!r}")
            entries.append((str(base / row[0]), str(base / row[1]), row[2]))
    return CorpusManifest(entries)


def save_manifest(path, manifest: CorpusManifest) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(manifest.entries)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass
class UtteranceFeatures:
    logspec: ft.FeatureSequence
    mcep: ft.FeatureSequence
    formants: fm.FormantTrack


def analyze_utterance(clip: ft.AudioClip, cfg: AnalysisConfig) -> UtteranceFeatures:
    if clip.sample_rate != cfg.sample_rate:
        raise InputError(f"clip sample rate {clip.sample_rate} does not match "
                         f"configured {cfg.sample_rate}")
    specs = ft.stft_analyze(clip, cfg.frame_shift, cfg.frame_len)
    mceps = ft.mcep_analyze(specs, order=cfg.order, alpha=cfg.alpha)
    track = fm.track_formants(clip, cfg.frame_shift, cfg.frame_len,
                              order=cfg.lpc_order, preemphasis=cfg.preemphasis)
    return UtteranceFeatures(specs, mceps, track)


def _aligned_pairs_for_entry(entry, cfg: AnalysisConfig):
    src_path, tgt_path, utt_id = entry
    try:
        src = analyze_utterance(ft.read_wav(src_path), cfg)
        tgt = analyze_utterance(ft.read_wav(tgt_path), cfg)
        path, _ = dtw_align(src.mcep, tgt.mcep)
        return pair_frames(path, src.mcep, tgt.mcep, src.logspec, tgt.logspec,
                           src.formants, tgt.formants)
    except (OSError, InputError, NumericalError) as e:
        raise InputError(f"utterance {utt_id}: {e}") from e


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------

MODEL_VERSION = 1


@dataclass
class ModelBundle:
    main_gmm: gmm.JointGMM
    formant_gmm: gmm.JointGMM
    config: AnalysisConfig
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.main_gmm.dx != self.config.order or self.main_gmm.dy != self.config.order:
            raise InputError("main mixture dimensions do not match the configured order")
        if self.formant_gmm.dx != self.config.order or self.formant_gmm.dy != 8:
            raise InputError("formant mixture dimensions are inconsistent")


def _gmm_to_dict(model: gmm.JointGMM, covariances_external: bool, sidecar: list) -> dict:
    d = {
        "Q": model.n_components,
        "Dx": model.dx,
        "Dy": model.dy,
        "priors": model.priors.tolist(),
        "means": model.means.tolist(),
    }
    if covariances_external:
        offset = sum(a.size for a in sidecar)
        d["covariances"] = {"offset": offset, "count": int(model.covariances.size)}
        sidecar.append(model.covariances)
    else:
        d["covariances"] = model.covariances.reshape(model.n_components, -1).tolist()
    return d


def _gmm_from_dict(d: dict, sidecar: np.ndarray | None) -> gmm.JointGMM:
    q, dx, dy = d["Q"], d["Dx"], d["Dy"]
    dim = dx + dy
    cov_field = d["covariances"]
    if isinstance(cov_field, dict):
        if sidecar is None:
            raise InputError("model references a covariance sidecar that was not found")
        flat = sidecar[cov_field["offset"]:cov_field["offset"] + cov_field["count"]]
        covs = flat.reshape(q, dim, dim)
    else:
        covs = np.asarray(cov_field, dtype=np.float64).reshape(q, dim, dim)
    return gmm.JointGMM(np.asarray(d["priors"]), np.asarray(d["means"]), covs, dx=dx, dy=dy)


def save_model(path, bundle: ModelBundle, covariances_external: bool = False) -> None:
    """JSON envelope; covariances optionally go to an f64-LE binary sidecar
    referenced by filename."""
    path = Path(path)
    sidecar_arrays = []
    doc = {
        "version": MODEL_VERSION,
        "main_gmm": _gmm_to_dict(bundle.main_gmm, covariances_external, sidecar_arrays),
        "formant_gmm": _gmm_to_dict(bundle.formant_gmm, covariances_external, sidecar_arrays),
        "config": bundle.config.to_dict(),
        "stats": bundle.stats,
    }
    if covariances_external:
        sidecar_name = path.name + ".cov"
        doc["covariance_file"] = sidecar_name
        flat = np.concatenate([a.reshape(-1) for a in sidecar_arrays])
        with open(path.parent / sidecar_name, "wb") as f:
            f.write(flat.astype("<f8").tobytes())
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_model(path) -> ModelBundle:
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != MODEL_VERSION:
        raise InputError(f"{path}: unsupported model version {doc.get('version')!r}")
    sidecar = None
    if "covariance_file" in doc:
        with open(path.parent / doc["covariance_file"], "rb") as f:
            sidecar = np.frombuffer(f.read(), dtype="<f8")
    return ModelBundle(
        main_gmm=_gmm_from_dict(doc["main_gmm"], sidecar),
        formant_gmm=_gmm_from_dict(doc["formant_gmm"], sidecar),
        config=AnalysisConfig.from_dict(doc["config"]),
        stats=doc.get("stats", {}),
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def collect_training_pairs(manifest: CorpusManifest, cfg: AnalysisConfig) -> list:
    pairs = []
    for entry in manifest.entries:
        pairs.extend(_aligned_pairs_for_entry(entry, cfg))
    return pairs


def train(manifest: CorpusManifest, cfg: AnalysisConfig) -> ModelBundle:
    """Full training pass over a parallel corpus; returns the model bundle
    with the equalization report in its stats."""
    if len(manifest) < 2:
        raise InputError("training needs at least two utterance pairs")
    pairs = collect_training_pairs(manifest, cfg)
    eq = equalize_corpus(pairs)

    n_retained = len(eq.source_mceps)
    if n_retained < 10 * cfg.q_main:
        raise InputError(f"only {n_retained} retained pairs; "
                         f"Q={cfg.q_main} needs at least {10 * cfg.q_main}")
    main = gmm.train_em(eq.source_mceps[:, 1:], eq.target_mceps[:, 1:],
                        cfg.q_main, seed=cfg.seed,
                        max_iter=cfg.em_max_iter, rel_tol=cfg.em_rel_tol)

    fx, fy = [], []
    for r in eq.retained:
        if r.pair.formants_y.valid:
            fx.append(r.pair.mcep_x[1:])
            fy.append(gmm.formant_vector(r.pair.formants_y))
    if len(fx) < 10 * cfg.q_formant:
        raise InputError(f"only {len(fx)} valid-formant pairs; "
                         f"Q={cfg.q_formant} needs at least {10 * cfg.q_formant}")
    formant = gmm.train_formant_gmm(np.array(fx), np.array(fy),
                                    n_components=cfg.q_formant, seed=cfg.seed + 1,
                                    max_iter=cfg.em_max_iter, rel_tol=cfg.em_rel_tol)

    stats = eq.report()
    stats["aligned_pairs"] = len(pairs)
    stats["formant_pairs"] = len(fx)
    return ModelBundle(main, formant, cfg, stats)


# ---------------------------------------------------------------------------
# conversion
# ---------------------------------------------------------------------------

@dataclass
class ConvertedUtterance:
    mceps: ft.FeatureSequence
    logspecs: ft.FeatureSequence
    posteriors: np.ndarray
    identity_frames: int  # frames converted without the final warp


def convert_utterance(clip: ft.AudioClip, bundle: ModelBundle) -> ConvertedUtterance:
    """Convert one source utterance.

    Per frame: regress the target mel-cepstrum, measure the source
    formants, predict the target formants, and warp the regressed spectrum
    from the source layout to the predicted target layout.  Frames without
    reliable source formants skip the warp.
    """
    cfg = bundle.config
    feats = analyze_utterance(clip, cfg)
    x_tail = feats.mcep.frames[:, 1:]
    result = gmm.convert(bundle.main_gmm, x_tail)
    c0 = feats.mcep.frames[:, 0]

    n = len(feats.mcep)
    out_mcep = np.empty((n, cfg.order + 1))
    out_spec = np.empty((n, cfg.fft_size // 2 + 1))
    identity_frames = 0
    for i in range(n):
        coeffs = np.concatenate([[c0[i]], result.converted[i]])
        frame = ft.McepFrame(coeffs, alpha=cfg.alpha)
        spec = ft.logspec_from_mcep(frame, cfg.fft_size)
        source_formants = feats.formants[i]
        if source_formants.valid:
            target_formants = gmm.predict_target_formants(
                bundle.formant_gmm, x_tail[i], cfg.sample_rate)
            warp = build_warp(source_formants, target_formants, cfg.nyquist)
            spec = apply_dfw(spec, warp)
            warped = ft.mcep_from_logspec(spec, order=cfg.order, alpha=cfg.alpha)
            warped.coeffs[0] = coeffs[0]
            coeffs = warped.coeffs
        else:
            identity_frames += 1
        out_mcep[i] = coeffs
        out_spec[i] = spec.bins
    mcep_seq = ft.FeatureSequence(out_mcep, frame_shift=cfg.frame_shift, kind=ft.KIND_MCEP,
                                  sample_rate=cfg.sample_rate, alpha=cfg.alpha, order=cfg.order)
    spec_seq = ft.FeatureSequence(out_spec, frame_shift=cfg.frame_shift, kind=ft.KIND_LOGSPEC,
                                  sample_rate=cfg.sample_rate)
    return ConvertedUtterance(mcep_seq, spec_seq, result.posteriors, identity_frames)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(bundle: ModelBundle, manifest: CorpusManifest,
             grid_resolution: tuple = (60, 60), max_complexity_pairs: int = 2000) -> dict:
    """Objective report on a parallel test set.

    Reports the aligned-pair distortion of source vs target, of the
    converted source vs target, the distortion after formant
    equalization, and mean complexity-map values for raw vs equalized
    pairs.
    """
    cfg = bundle.config
    melcd_src, melcd_conv = [], []
    pairs = []
    for entry in manifest.entries:
        src_path, _, utt_id = entry
        entry_pairs = _aligned_pairs_for_entry(entry, cfg)
        pairs.extend(entry_pairs)
        try:
            converted = convert_utterance(ft.read_wav(src_path), bundle)
        except (OSError, InputError, NumericalError) as e:
            raise InputError(f"utterance {utt_id}: {e}") from e
        src_rows = np.array([p.mcep_x for p in entry_pairs])
        tgt_rows = np.array([p.mcep_y for p in entry_pairs])
        conv_rows = converted.mceps.frames[[p.src_index for p in entry_pairs]]
        melcd_src.append(ft.mel_cd_frames(src_rows, tgt_rows))
        melcd_conv.append(ft.mel_cd_frames(conv_rows, tgt_rows))

    eq = equalize_corpus(pairs)
    raw_x = np.array([p.mcep_x[1:] for p in pairs])
    raw_y = np.array([p.mcep_y[1:] for p in pairs])
    step = max(1, len(raw_x) // max_complexity_pairs)
    grid_raw = cx.complexity_grid(raw_x[::step], raw_y[::step],
                                  sigma=cfg.sigma, resolution=grid_resolution)
    grid_eq = cx.complexity_grid(eq.source_mceps[::step, 1:], eq.target_mceps[::step, 1:],
                                 sigma=cfg.sigma, resolution=grid_resolution)

    return {
        "utterances": len(manifest),
        "aligned_pairs": len(pairs),
        "melcd_source_target": float(np.mean(np.concatenate(melcd_src))),
        "melcd_converted_target": float(np.mean(np.concatenate(melcd_conv))),
        "melcd_equalized": eq.mean_melcd_after,
        "equalization": eq.report(),
        "complexity_mean_raw": grid_raw.mean,
        "complexity_mean_equalized": grid_eq.mean,
        "complexity_coverage_raw": grid_raw.coverage,
        "complexity_coverage_equalized": grid_eq.coverage,
    }


# ---------------------------------------------------------------------------
# resynthesis (debug listening only; magnitude-only phase reconstruction)
# ---------------------------------------------------------------------------

def _stft_complex(samples: np.ndarray, window: np.ndarray, hop: int,
                  fft_size: int, n_frames: int) -> np.ndarray:
    flen = len(window)
    need = (n_frames - 1) * hop + flen
    x = np.zeros(need)
    x[:min(need, len(samples))] = samples[:need]
    out = np.empty((n_frames, fft_size // 2 + 1), dtype=np.complex128)
    for i in range(n_frames):
        out[i] = np.fft.rfft(x[i * hop:i * hop + flen] * window, n=fft_size)
    return out


def _overlap_add(frames_complex: np.ndarray, window: np.ndarray, hop: int) -> np.ndarray:
    n_frames = len(frames_complex)
    flen = len(window)
    total = (n_frames - 1) * hop + flen
    acc = np.zeros(total)
    norm = np.zeros(total)
    w2 = window * window
    for i in range(n_frames):
        seg = np.fft.irfft(frames_complex[i])[:flen]
        acc[i * hop:i * hop + flen] += seg * window
        norm[i * hop:i * hop + flen] += w2
    good = norm > 1e-12
    acc[good] /= norm[good]
    return acc


def resynthesize(logspecs: ft.FeatureSequence, n_iter: int = 32,
                 frame_len_s: float = ft.DEFAULT_FRAME_LEN) -> ft.AudioClip:
    """Iterative magnitude-only phase reconstruction and overlap-add.

    Debug listening only; starts from zero phase so the output is
    deterministic.  The result is peak-normalized unless it is silence.
    """
    if logspecs.kind != ft.KIND_LOGSPEC:
        raise InputError("resynthesis needs a log-spectrum sequence")
    fs = logspecs.sample_rate
    hop = int(round(logspecs.frame_shift * fs))
    flen = int(round(frame_len_s * fs))
    fft_size = logspecs.fft_size
    if fft_size < flen:
        raise InputError("frame length exceeds the FFT size of the spectra")
    window = np.hanning(flen)
    mags = np.exp(logspecs.frames)
    n_frames = len(mags)

    phase = np.zeros_like(mags)
    for _ in range(n_iter):
        samples = _overlap_add(mags * np.exp(1j * phase), window, hop)
        phase = np.angle(_stft_complex(samples, window, hop, fft_size, n_frames))
    samples = _overlap_add(mags * np.exp(1j * phase), window, hop)
    peak = np.max(np.abs(samples))
    if peak > 1e-8:
        samples = samples / peak
    return ft.AudioClip(samples, fs)
