"""Joint-density Gaussian mixture: full-covariance EM on stacked
source-target vectors and per-frame MMSE regression.

For component q with block-partitioned mean/covariance, the conditional
mean of the target given a source vector x is

    E[y | x, q] = mu_y_q + Cov_yx_q Cov_xx_q^{-1} (x - mu_x_q)

and conversion is the posterior-weighted sum of the per-component means,
where posteriors come from the source marginal of the mixture.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import InputError, NumericalError
from .formants import EDGE_MARGIN_HZ, MAX_BANDWIDTH_HZ, MIN_FREQ_HZ, FormantFrame

log = logging.getLogger(__name__)

FLOOR_SCALE = 1e-6
KMEANS_ITERS = 20

# the formant-predictor mixture is trained on kHz so its covariance blocks
# stay on the same scale as the mel-cepstral block
FORMANT_SCALE = 1e-3
MIN_PREDICTED_BW_HZ = 10.0
FORMANT_SEPARATION_HZ = 1e-3


@dataclass
class JointGMM:
    """Q-component full-covariance mixture over stacked [x; y] vectors."""

    priors: np.ndarray        # (Q,)
    means: np.ndarray         # (Q, Dx+Dy)
    covariances: np.ndarray   # (Q, Dx+Dy, Dx+Dy)
    dx: int
    dy: int
    log_likelihoods: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        q = len(self.priors)
        d = self.dx + self.dy
        if self.means.shape != (q, d) or self.covariances.shape != (q, d, d):
            raise InputError("inconsistent mixture shapes")
        if np.any(self.priors <= 0.0) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise InputError("priors must be positive and sum to one")

    @property
    def n_components(self) -> int:
        return len(self.priors)

    # block views -----------------------------------------------------------
    @property
    def means_x(self):
        return self.means[:, :self.dx]

    @property
    def means_y(self):
        return self.means[:, self.dx:]

    @property
    def cov_xx(self):
        return self.covariances[:, :self.dx, :self.dx]

    @property
    def cov_yx(self):
        return self.covariances[:, self.dx:, :self.dx]


@dataclass
class ConversionResult:
    """Converted frames plus the per-frame component posteriors."""

    converted: np.ndarray   # (N, Dy)
    posteriors: np.ndarray  # (N, Q), rows sum to one


# ---------------------------------------------------------------------------
# numerics helpers
# ---------------------------------------------------------------------------

def _floor_spd(cov: np.ndarray, context: str = "") -> np.ndarray:
    """Symmetrize and, if the Cholesky fails, add eps*I with
    eps = 1e-6 * trace / dim.  Raises when flooring cannot help."""
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        pass
    eps = FLOOR_SCALE * np.trace(cov) / cov.shape[0]
    if not eps > 0.0:
        raise NumericalError(f"degenerate covariance{context}: zero trace")
    log.debug("covariance flooring engaged%s (eps=%.3e)", context, eps)
    cov = cov + eps * np.eye(cov.shape[0])
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(f"covariance not repairable by flooring{context}")
    return cov


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; mean, cov) via Cholesky."""
    chol = np.linalg.cholesky(cov)
    diff = (x - mean).T
    sol = solve_triangular(chol, diff, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    d = cov.shape[0]
    return -0.5 * (np.sum(sol * sol, axis=0) + logdet + d * np.log(2.0 * np.pi))


def _logsumexp(a: np.ndarray, axis: int):
    amax = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    return np.squeeze(out, axis=axis)


def _kmeans(z: np.ndarray, k: int, rng: np.random.Generator, iters: int = KMEANS_ITERS):
    """k-means++ seeding followed by a fixed number of Lloyd iterations."""
    n = len(z)
    centers = np.empty((k, z.shape[1]))
    centers[0] = z[rng.integers(n)]
    d2 = np.sum((z - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = int(rng.integers(n))
        centers[i] = z[idx]
        d2 = np.minimum(d2, np.sum((z - centers[i]) ** 2, axis=1))
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dists = np.sum((z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        for c in range(k):
            members = z[new_assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return assign, centers


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_em(x: np.ndarray, y: np.ndarray, n_components: int, seed: int,
             max_iter: int = 100, rel_tol: float = 1e-6) -> JointGMM:
    """Fit a joint GMM to paired vectors by full-covariance EM.

    Initialization is k-means (k-means++ seeding from the given seed);
    the M-step uses biased (1/N-weighted) covariances; the log-likelihood
    is asserted non-decreasing up to flooring slack.  Identical seed and
    data give a bit-identical model.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
        raise InputError("x and y must be matrices with matching row counts")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("training vectors contain non-finite values")
    n = len(x)
    if n < 10 * n_components:
        raise InputError(f"need at least {10 * n_components} pairs for Q={n_components}, got {n}")
    z = np.hstack([x, y])
    d = z.shape[1]
    rng = np.random.default_rng(seed)

    assign, centers = _kmeans(z, n_components, rng)
    priors = np.empty(n_components)
    means = np.empty((n_components, d))
    covs = np.empty((n_components, d, d))
    global_mean = z.mean(axis=0)
    zc = z - global_mean
    global_cov = (zc.T @ zc) / n
    for q in range(n_components):
        members = z[assign == q]
        if len(members) >= 2:
            priors[q] = len(members) / n
            means[q] = members.mean(axis=0)
            diff = members - means[q]
            covs[q] = _floor_spd((diff.T @ diff) / len(members), f" (init component {q})")
        else:
            priors[q] = 1.0 / n
            means[q] = centers[q]
            covs[q] = _floor_spd(global_cov.copy(), f" (init component {q})")
    priors /= priors.sum()

    prev_ll = -np.inf
    ll_history = []
    for iteration in range(max_iter):
        log_prob = np.empty((n, n_components))
        for q in range(n_components):
            log_prob[:, q] = np.log(priors[q]) + _log_gauss(z, means[q], covs[q])
        log_norm = _logsumexp(log_prob, axis=1)
        ll = float(np.sum(log_norm))
        ll_history.append(ll)
        if ll < prev_ll - 1e-9 * max(1.0, abs(prev_ll)):
            raise NumericalError(
                f"EM log-likelihood decreased at iteration {iteration}: {prev_ll} -> {ll}")
        if np.isfinite(prev_ll) and (ll - prev_ll) < rel_tol * abs(prev_ll):
            break
        prev_ll = ll

        resp = np.exp(log_prob - log_norm[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        priors = nk / n
        means = (resp.T @ z) / nk[:, None]
        for q in range(n_components):
            diff = z - means[q]
            covs[q] = _floor_spd((diff * resp[:, q:q + 1]).T @ diff / nk[q],
                                 f" (component {q}, iteration {iteration})")

    priors = priors / priors.sum()
    model = JointGMM(priors, means, covs, dx=x.shape[1], dy=y.shape[1])
    model.log_likelihoods = ll_history
    return model


# ---------------------------------------------------------------------------
# regression and conversion
# ---------------------------------------------------------------------------

def component_regression(model: JointGMM, x_vec: np.ndarray, q: int) -> np.ndarray:
    """Conditional mean of the target given x under component q."""
    x_vec = np.asarray(x_vec, dtype=np.float64)
    if x_vec.shape != (model.dx,):
        raise InputError("query dimension does not match the model")
    try:
        chol = cho_factor(model.cov_xx[q], lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"singular source covariance in component {q}") from e
    return model.means_y[q] + model.cov_yx[q] @ cho_solve(chol, x_vec - model.means_x[q])


def posterior(model: JointGMM, x_vec: np.ndarray) -> np.ndarray:
    """Component responsibilities of a source vector under the x-marginal."""
    x_vec = np.asarray(x_vec, dtype=np.float64)
    if x_vec.shape != (model.dx,):
        raise InputError("query dimension does not match the model")
    return _posterior_rows(model, x_vec[None, :])[0]


def _posterior_rows(model: JointGMM, x_mat: np.ndarray) -> np.ndarray:
    log_prob = np.empty((len(x_mat), model.n_components))
    for q in range(model.n_components):
        log_prob[:, q] = np.log(model.priors[q]) + _log_gauss(
            x_mat, model.means_x[q], model.cov_xx[q])
    log_norm = _logsumexp(log_prob, axis=1)
    return np.exp(log_prob - log_norm[:, None])


def convert(model: JointGMM, x_frames: np.ndarray) -> ConversionResult:
    """Frame-wise MMSE conversion: the posterior-weighted sum of the
    per-component conditional means.  Frames are independent."""
    x_mat = np.asarray(x_frames, dtype=np.float64)
    if x_mat.ndim != 2 or x_mat.shape[1] != model.dx:
        raise InputError("frames must be N x Dx for this model")
    post = _posterior_rows(model, x_mat)
    cond = np.empty((model.n_components, len(x_mat), model.dy))
    for q in range(model.n_components):
        try:
            chol = cho_factor(model.cov_xx[q], lower=True)
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"singular source covariance in component {q}") from e
        sol = cho_solve(chol, (x_mat - model.means_x[q]).T)
        cond[q] = model.means_y[q] + (model.cov_yx[q] @ sol).T
    converted = np.einsum("nq,qnd->nd", post, cond)
    return ConversionResult(converted, post)


# ---------------------------------------------------------------------------
# formant-predictor mixture (source mcep -> target formant vector)
# ---------------------------------------------------------------------------

def train_formant_gmm(source_mceps: np.ndarray, target_formants_hz: np.ndarray,
                      n_components: int = 8, seed: int = 0,
                      max_iter: int = 100, rel_tol: float = 1e-6) -> JointGMM:
    """Joint mixture over (source c1..c_order, target [f1..f4, b1..b4]).

    Callers must pass only pairs whose target formant frame is valid.
    Formant values are scaled to kHz internally; predict_target_formants
    undoes the scaling.
    """
    target = np.asarray(target_formants_hz, dtype=np.float64)
    if target.ndim != 2 or target.shape[1] != 8:
        raise InputError("target formant vectors must be N x 8 ([f1..f4, b1..b4])")
    return train_em(source_mceps, target * FORMANT_SCALE, n_components, seed,
                    max_iter=max_iter, rel_tol=rel_tol)


def formant_vector(frame: FormantFrame) -> np.ndarray:
    """[f1..f4, b1..b4] in Hz from a valid formant frame."""
    if not frame.valid:
        raise InputError("formant frame is not valid")
    return np.concatenate([frame.frequencies, frame.bandwidths])


def predict_target_formants(model: JointGMM, source_mcep_tail: np.ndarray,
                            sample_rate: int) -> FormantFrame:
    """Predicted target formant frame for one source frame (c1..c_order).

    Frequencies are clamped into [90, Nyquist - 100] Hz, bandwidths into
    [10, 700] Hz, and ties after clamping are separated so the frame always
    satisfies the strictly-increasing invariant."""
    raw = convert(model, np.asarray(source_mcep_tail, dtype=np.float64)[None, :]).converted[0]
    raw = raw / FORMANT_SCALE
    nyquist = sample_rate / 2.0
    freqs = np.clip(raw[:4], MIN_FREQ_HZ, nyquist - EDGE_MARGIN_HZ)
    bws = np.clip(raw[4:], MIN_PREDICTED_BW_HZ, MAX_BANDWIDTH_HZ)
    order = np.argsort(freqs, kind="stable")
    freqs, bws = freqs[order], bws[order]
    sep = FORMANT_SEPARATION_HZ
    for k in range(1, 4):
        if freqs[k] <= freqs[k - 1]:
            freqs[k] = freqs[k - 1] + sep
    for k in range(2, -1, -1):  # only triggers when everything piled at the cap
        if freqs[k] >= freqs[k + 1]:
            freqs[k] = freqs[k + 1] - sep
    return FormantFrame(list(zip(freqs, bws)), valid=True)
