"""Mapping-complexity maps: locality-weighted covariance determinants.

For a query point x', target vectors are weighted by a Gaussian kernel on
their source-side distance to x'; the log-determinant of the weighted
covariance measures how inconsistent the local source-to-target mapping
is.  High values mean one-to-many behaviour.  Grids are laid out in
PCA-projected source coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_SIGMA = 0.1
DET_FLOOR = 1e-12
EMPTY_NEIGHBORHOOD = 1e-12  # weight-mass threshold below which a cell has no data


def locality_weights(x_query: np.ndarray, x_data: np.ndarray,
                     sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Gaussian kernel weights exp(-||x_i - x'||^2 / (2 sigma^2))."""
    if sigma <= 0.0:
        raise InputError("sigma must be positive")
    d2 = np.sum((np.asarray(x_data, float) - np.asarray(x_query, float)) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def weighted_cov(x_query: np.ndarray, x_data: np.ndarray, y_data: np.ndarray,
                 sigma: float = DEFAULT_SIGMA):
    """Locality-weighted covariance of the targets around a source query.

    The weighted mean of y is subtracted before the outer-product
    accumulation, and the result is normalized by the total weight.
    Returns None when the neighborhood carries no weight mass.
    """
    y = np.asarray(y_data, dtype=np.float64)
    w = locality_weights(x_query, x_data, sigma)
    sw = w.sum()
    if sw <= EMPTY_NEIGHBORHOOD:
        return None
    ybar = (w @ y) / sw
    yc = y - ybar
    return (yc * w[:, None]).T @ yc / sw


def consistency(x_query: np.ndarray, x_data: np.ndarray, y_data: np.ndarray,
                sigma: float = DEFAULT_SIGMA, floor: float = DET_FLOOR):
    """log det(weighted_cov + floor*I); None for an empty neighborhood."""
    cov = weighted_cov(x_query, x_data, y_data, sigma)
    if cov is None:
        return None
    sign, logdet = np.linalg.slogdet(cov + floor * np.eye(cov.shape[0]))
    if sign <= 0:
        raise InputError("weighted covariance lost positive definiteness")
    return float(logdet)


def pca_project(x_data: np.ndarray, dims: int = 2):
    """Center, eigendecompose the covariance, project onto the top
    eigenvectors (descending eigenvalue; the largest-magnitude entry of
    each basis vector is made positive).  Returns (projections, basis, mean).
    """
    x = np.asarray(x_data, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise InputError("PCA needs at least two observations")
    if dims < 1 or dims > x.shape[1]:
        raise InputError("invalid projection dimension")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dims]
    basis = evecs[:, order]
    for k in range(dims):
        pivot = np.argmax(np.abs(basis[:, k]))
        if basis[pivot, k] < 0:
            basis[:, k] = -basis[:, k]
    return xc @ basis, basis, mean


@dataclass
class ComplexityGrid:
    """R x C log-consistency values over a rectangle of projected coordinates.

    Cells whose neighborhood carries no weight mass are NaN (no data).
    extent is (x_min, x_max, y_min, y_max) in the projected space.
    """

    grid: np.ndarray
    extent: tuple
    resolution: tuple
    sigma: float
    floor: float

    @property
    def mean(self) -> float:
        vals = self.grid[np.isfinite(self.grid)]
        if len(vals) == 0:
            raise InputError("complexity grid has no populated cells")
        return float(vals.mean())

    @property
    def coverage(self) -> float:
        return float(np.isfinite(self.grid).mean())


def zscore(data: np.ndarray):
    """Per-dimension standardization; constant dimensions are left unscaled."""
    data = np.asarray(data, dtype=np.float64)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return (data - mean) / std


def complexity_grid(x_data: np.ndarray, y_data: np.ndarray,
                    sigma: float = DEFAULT_SIGMA,
                    resolution: tuple = (200, 200),
                    weight_space: str = "pca") -> ComplexityGrid:
    """Consistency evaluated at the nodes of a grid in PCA coordinates.

    Features are z-scored per dimension, the sources are PCA-projected to
    two dimensions and each projection axis is standardized, so sigma is a
    fraction of one standard deviation.  With weight_space="pca" (default)
    kernel weights use the 2-D projected coordinates; "full" lifts each
    grid node back to the full feature space instead (with z-scored
    high-dimensional features this usually leaves every neighborhood
    empty at sigma=0.1, so it is off by default).  Target covariances are
    always taken over the full-dimension (z-scored) targets.
    """
    x = np.asarray(x_data, dtype=np.float64)
    y = np.asarray(y_data, dtype=np.float64)
    if len(x) != len(y):
        raise InputError("x and y must pair up")
    if weight_space not in ("pca", "full"):
        raise InputError("weight_space must be 'pca' or 'full'")
    rows, cols = resolution
    if rows < 1 or cols < 1:
        raise InputError("resolution must be positive")

    xn = zscore(x)
    yn = zscore(y)
    if len(x) == 1:
        proj = np.zeros((1, 2))
        basis = np.zeros((x.shape[1], 2))
        scale = np.ones(2)
    else:
        proj, basis, _ = pca_project(xn, dims=2)
        scale = proj.std(axis=0)
        scale = np.where(scale > 0.0, scale, 1.0)
        proj = proj / scale

    x_min, x_max = float(proj[:, 0].min()), float(proj[:, 0].max())
    y_min, y_max = float(proj[:, 1].min()), float(proj[:, 1].max())
    xs = np.linspace(x_min, x_max, cols) if cols > 1 else np.array([0.5 * (x_min + x_max)])
    ys = np.linspace(y_min, y_max, rows) if rows > 1 else np.array([0.5 * (y_min + y_max)])

    grid = np.full((rows, cols), np.nan)
    for r in range(rows):
        for c in range(cols):
            node = np.array([xs[c], ys[r]])
            if weight_space == "pca":
                value = consistency(node, proj, yn, sigma)
            else:
                query = (node * scale) @ basis.T  # lift back to the z-scored feature space
                value = consistency(query, xn, yn, sigma)
            if value is not None:
                grid[r, c] = value
    return ComplexityGrid(grid, (x_min, x_max, y_min, y_max), (rows, cols), sigma, DET_FLOOR)


# ---------------------------------------------------------------------------
# grid files: CSV matrix + JSON sidecar, optional PGM rendering
# ---------------------------------------------------------------------------

def save_grid(csv_path, grid: ComplexityGrid, sidecar_path=None) -> None:
    np.savetxt(csv_path, grid.grid, delimiter=",", fmt="%.9g")
    if sidecar_path is None:
        sidecar_path = str(csv_path) + ".json"
    meta = {
        "extent": list(grid.extent),
        "resolution": list(grid.resolution),
        "sigma": grid.sigma,
        "floor": grid.floor,
    }
    with open(sidecar_path, "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def load_grid(csv_path, sidecar_path=None) -> ComplexityGrid:
    if sidecar_path is None:
        sidecar_path = str(csv_path) + ".json"
    values = np.atleast_2d(np.loadtxt(csv_path, delimiter=","))
    with open(sidecar_path) as f:
        meta = json.load(f)
    return ComplexityGrid(values, tuple(meta["extent"]), tuple(meta["resolution"]),
                          float(meta["sigma"]), float(meta["floor"]))


def render_pgm(path, grid: ComplexityGrid) -> None:
    """8-bit binary PGM, linear min-max scaling; no-data cells map to 0."""
    values = grid.grid
    finite = values[np.isfinite(values)]
    out = np.zeros(values.shape, dtype=np.uint8)
    if len(finite) and finite.max() > finite.min():
        span = finite.max() - finite.min()
        scaled = (values - finite.min()) / span * 255.0
        mask = np.isfinite(values)
        out[mask] = np.clip(np.round(scaled[mask]), 0, 255).astype(np.uint8)
    rows, cols = values.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        f.write(out.tobytes())
