"""Explicit feature maps: scalars to cosine/sine vectors, points to tensors.

A scalar v maps, per frequency w, to a weighted (cos(w v), sin(w v)) pair;
the sine slot of w = 0 is dropped. Three weightings exist: symmetric
(sqrt(alpha), inner products reproduce the kernel approximant), query
(alpha) and database (1). Query/database inner products equal
symmetric/symmetric ones, which is what lets one unweighted database
vector serve every kernel.

Component ordering contract (all downstream sub-vector indexing relies on
it): axes nest x (outermost), then y, then orientation; within one axis,
frequencies ascend and cos precedes sin. For a full embedding the flat
index is ``(ix * D_x + iy) * D_phi + iphi``; a projection drops the middle
axis. See README for the worked (|Omega_x|, |Omega_phi|) = (5, 2) table.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kernels import Spectrum


class Weighting(Enum):
    SYMMETRIC = "symmetric"
    QUERY = "query"
    DATABASE = "database"


@dataclass(frozen=True)
class MapMode:
    """Weighting variant plus the kernel it evaluates.

    Database mode carries no kernel index: its weights are identically one
    and the kernel is chosen later by the query side.
    """

    weighting: Weighting
    kernel_index: int | None = None

    def __post_init__(self):
        if self.weighting is Weighting.DATABASE:
            if self.kernel_index is not None:
                raise ValueError("database mode carries no kernel index")
        elif self.kernel_index is None:
            raise ValueError(f"{self.weighting.value} mode needs a kernel index")


def symmetric(kernel_index: int) -> MapMode:
    return MapMode(Weighting.SYMMETRIC, kernel_index)


def query(kernel_index: int) -> MapMode:
    return MapMode(Weighting.QUERY, kernel_index)


DATABASE = MapMode(Weighting.DATABASE)


def axis_dim(n_freq: int) -> int:
    return 2 * n_freq - 1


@dataclass(frozen=True)
class EmbeddingLayout:
    """Frequency sets of the two axes plus derived dimensions."""

    omega_x: np.ndarray
    omega_phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega_x", np.asarray(self.omega_x, dtype=float))
        object.__setattr__(self, "omega_phi", np.asarray(self.omega_phi, dtype=float))

    @property
    def n_x(self) -> int:
        return self.omega_x.shape[0]

    @property
    def n_phi(self) -> int:
        return self.omega_phi.shape[0]

    @property
    def dim_x(self) -> int:
        return axis_dim(self.n_x)

    @property
    def dim_phi(self) -> int:
        return axis_dim(self.n_phi)

    @property
    def dim_full(self) -> int:
        return self.dim_x * self.dim_x * self.dim_phi

    @property
    def dim_proj(self) -> int:
        return self.dim_x * self.dim_phi

    def index_table(self) -> list[tuple[int, tuple, tuple, tuple]]:
        """Flat full-embedding index -> ((wx, part), (wy, part), (wphi, part))."""
        slots_x = axis_slots(self.omega_x)
        slots_phi = axis_slots(self.omega_phi)
        table = []
        flat = 0
        for sx in slots_x:
            for sy in slots_x:
                for sp in slots_phi:
                    table.append((flat, sx, sy, sp))
                    flat += 1
        return table


def axis_slots(freqs: np.ndarray) -> list[tuple[float, str]]:
    """Per-axis component order: frequencies ascending, cos then sin, no
    sine at frequency zero."""
    slots: list[tuple[float, str]] = []
    for w in freqs:
        slots.append((float(w), "cos"))
        if w != 0.0:
            slots.append((float(w), "sin"))
    return slots


def _axis_weights(spectrum: Spectrum, mode: MapMode) -> np.ndarray:
    """Per-component weight vector of one axis (length 2|Omega| - 1)."""
    n = spectrum.n_freq
    if mode.weighting is Weighting.DATABASE:
        per_freq = np.ones(n)
    else:
        alpha = spectrum.weights[mode.kernel_index]
        per_freq = np.sqrt(alpha) if mode.weighting is Weighting.SYMMETRIC else alpha
    out = np.empty(axis_dim(n))
    out[0] = per_freq[0]
    out[1::2] = per_freq[1:]
    out[2::2] = per_freq[1:]
    return out


def embed_values(values, spectrum: Spectrum, mode: MapMode) -> np.ndarray:
    """Vectorized 1D embedding: (n,) values -> (n, 2|Omega|-1) matrix."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    freqs = spectrum.frequencies
    phase = np.outer(values, freqs)
    cos = np.cos(phase)
    sin = np.sin(phase)
    out = np.empty((values.shape[0], axis_dim(freqs.shape[0])))
    out[:, 0] = cos[:, 0]
    out[:, 1::2] = cos[:, 1:]
    out[:, 2::2] = sin[:, 1:]
    out *= _axis_weights(spectrum, mode)
    return out


def embed_1d(value: float, spectrum: Spectrum, mode: MapMode) -> np.ndarray:
    return embed_values([value], spectrum, mode)[0]


@dataclass(frozen=True)
class AxisSpectra:
    """The spatial spectrum (shared by x and y) plus the orientation one.

    The spatial spectrum holds one weight row per searchable kernel; the
    orientation spectrum has a single row used with every spatial kernel.
    """

    spatial: Spectrum
    orientation: Spectrum

    @property
    def n_kernels(self) -> int:
        return self.spatial.n_kernels

    def layout(self) -> EmbeddingLayout:
        return EmbeddingLayout(
            omega_x=self.spatial.frequencies, omega_phi=self.orientation.frequencies
        )

    def _orientation_mode(self, mode: MapMode) -> MapMode:
        # The orientation spectrum has a single weight row.
        if mode.weighting is Weighting.DATABASE:
            return mode
        return MapMode(mode.weighting, 0)

    def weight_full(self, kernel_index: int, sym: bool = True) -> np.ndarray:
        """Per-component weights of the full embedding for one kernel,
        symmetric (sqrt alpha) or query (alpha) flavor."""
        mk = symmetric(kernel_index) if sym else query(kernel_index)
        wx = _axis_weights(self.spatial, mk)
        wp = _axis_weights(self.orientation, self._orientation_mode(mk))
        return ((wx[:, None] * wx[None, :])[:, :, None] * wp).ravel()

    def weight_proj(self, kernel_index: int, sym: bool = True) -> np.ndarray:
        mk = symmetric(kernel_index) if sym else query(kernel_index)
        wx = _axis_weights(self.spatial, mk)
        wp = _axis_weights(self.orientation, self._orientation_mode(mk))
        return (wx[:, None] * wp).ravel()


def embed_points_full(
    xs, ys, phis, spectra: AxisSpectra, mode: MapMode
) -> np.ndarray:
    """Tensor-product embeddings of points: (n, D_x * D_x * D_phi).

    The product nests x outermost and orientation innermost, matching the
    canonical flat ordering. Multiplication groups as (x * y) * phi so the
    database-mode projection sub-vectors are bitwise equal to directly
    computed projections.
    """
    ex = embed_values(xs, spectra.spatial, mode)
    ey = embed_values(ys, spectra.spatial, mode)
    ep = embed_values(phis, spectra.orientation, spectra._orientation_mode(mode))
    n = ex.shape[0]
    xy = ex[:, :, None] * ey[:, None, :]
    full = xy[:, :, :, None] * ep[:, None, None, :]
    return full.reshape(n, -1)


def embed_points_projection(
    coords, phis, spectra: AxisSpectra, mode: MapMode
) -> np.ndarray:
    """Single-axis tensor embeddings of points: (n, D_x * D_phi)."""
    ec = embed_values(coords, spectra.spatial, mode)
    ep = embed_values(phis, spectra.orientation, spectra._orientation_mode(mode))
    proj = ec[:, :, None] * ep[:, None, :]
    return proj.reshape(ec.shape[0], -1)


def embed_point_full(pt, spectra: AxisSpectra, mode: MapMode) -> np.ndarray:
    """Full embedding of one contour point (weight not applied)."""
    return embed_points_full([pt[0]], [pt[1]], [pt[2]], spectra, mode)[0]


def embed_point_projection(
    pt, axis: str, spectra: AxisSpectra, mode: MapMode
) -> np.ndarray:
    """Projection embedding of one point onto the x or y axis."""
    coord = pt[0] if axis == "x" else pt[1]
    return embed_points_projection([coord], [pt[2]], spectra, mode)[0]


def projection_indices(layout: EmbeddingLayout, axis: str) -> np.ndarray:
    """Flat full-embedding indices forming the database-side projection.

    The x projection keeps the y slot at (omega=0, cos); the y projection
    keeps the x slot there.
    """
    dx, dp = layout.dim_x, layout.dim_phi
    i = np.arange(dx)
    k = np.arange(dp)
    if axis == "x":
        return ((i * dx)[:, None] * dp + k).ravel()
    if axis == "y":
        return ((i * dp)[:, None] + k).ravel()
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
