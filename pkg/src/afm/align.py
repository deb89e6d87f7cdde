"""Score-versus-translation polynomials and translation search.

The inner product between a translated query descriptor and a database
descriptor is a trigonometric polynomial of the translation; its
coefficients come from sub-vector products of the two descriptors, so one
descriptor pair yields the similarity at every candidate translation for
the cost of a few small dot products. Descriptor norms are translation
invariant, making normalized scores available at no extra cost.

Conventions: a polynomial is evaluated at the displacement d that
translates the query contour by -d (the stored argmax is the offset of
the query content relative to the database content). Translation grids
are expressed in canonical pixels (longer image side = 400).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernels import LAMBDA_MAX
from .maps import EmbeddingLayout
from .sketch import CANONICAL_SIDE, NormBlock

MAX_SHIFT_PX = 80
SHIFT_STEP_PX = 20

PX_TO_NORM = LAMBDA_MAX / CANONICAL_SIDE


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TranslationGrid:
    """Symmetric 1D offset set; 2D searches use its Cartesian square."""

    scale: float
    max_shift: int
    step: int
    offsets: np.ndarray  # pixels, ascending, 0 included

    @property
    def offsets_norm(self) -> np.ndarray:
        return self.offsets * PX_TO_NORM

    @property
    def size(self) -> int:
        return self.offsets.shape[0]


def grid_for_scale(
    scale: float, max_shift: int = MAX_SHIFT_PX, step: int = SHIFT_STEP_PX
) -> TranslationGrid:
    """Grid whose reach grows and step shrinks with the query downscale."""
    mx = int(round(max_shift / scale))
    st = max(1, int(round(step * scale)))
    k = mx // st
    offsets = np.arange(-k, k + 1) * st
    return TranslationGrid(scale=scale, max_shift=mx, step=st, offsets=offsets)


def default_grids(
    scales=(1.0, 0.8, 0.6), max_shift: int = MAX_SHIFT_PX, step: int = SHIFT_STEP_PX
) -> dict[float, TranslationGrid]:
    return {s: grid_for_scale(s, max_shift, step) for s in scales}


def norm_product(query_norm: float, db_norms: NormBlock, kernel_index: int,
                 kind: str = "full") -> float:
    return query_norm * db_norms.get(kind, kernel_index)


# ---------------------------------------------------------------------------
# Sub-vector indexing


@lru_cache(maxsize=32)
def _axis_positions(n_freq: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of cos and sin slots along one embedded axis.

    Slot order per axis is [cos w0, cos w1, sin w1, cos w2, sin w2, ...];
    the sin array is zero-frequency padded with -1 (no such slot).
    """
    cos_pos = np.empty(n_freq, dtype=int)
    sin_pos = np.full(n_freq, -1, dtype=int)
    cos_pos[0] = 0
    for j in range(1, n_freq):
        cos_pos[j] = 2 * j - 1
        sin_pos[j] = 2 * j
    return cos_pos, sin_pos


def _gather_proj(vec: np.ndarray, n_freq: int, dim_phi: int):
    """(C, S) views of a projection vector: (n_freq, dim_phi) each.

    S has a zero row at frequency 0.
    """
    mat = vec.reshape(2 * n_freq - 1, dim_phi)
    cos_pos, sin_pos = _axis_positions(n_freq)
    c = mat[cos_pos]
    s = np.zeros_like(c)
    s[1:] = mat[sin_pos[1:]]
    return c, s


def _gather_full(vec: np.ndarray, n_freq: int, dim_phi: int):
    """Four (n_freq, n_freq, dim_phi) blocks of a full vector, keyed by the
    (x part, y part) trig pair; sin rows/cols of frequency 0 are zero."""
    d = 2 * n_freq - 1
    t = vec.reshape(d, d, dim_phi)
    cos_pos, sin_pos = _axis_positions(n_freq)
    cc = t[np.ix_(cos_pos, cos_pos)]
    sc = np.zeros_like(cc)
    cs = np.zeros_like(cc)
    ss = np.zeros_like(cc)
    sc[1:] = t[np.ix_(sin_pos[1:], cos_pos)]
    cs[:, 1:] = t[np.ix_(cos_pos, sin_pos[1:])]
    ss[1:, 1:] = t[np.ix_(sin_pos[1:], sin_pos[1:])]
    return cc, sc, cs, ss


# ---------------------------------------------------------------------------
# 1D polynomial


@dataclass(frozen=True)
class TrigPoly1D:
    frequencies: np.ndarray
    betas: np.ndarray  # per frequency
    gammas: np.ndarray  # per nonzero frequency
    norm_product: float

    @property
    def n_coefficients(self) -> int:
        return self.betas.shape[0] + self.gammas.shape[0]


def poly1d(
    query_proj: np.ndarray,
    db_proj: np.ndarray,
    layout: EmbeddingLayout,
    norm_prod: float,
) -> TrigPoly1D:
    """Coefficients of the score-vs-shift polynomial of two projections."""
    if query_proj.shape != (layout.dim_proj,) or db_proj.shape != (layout.dim_proj,):
        raise LayoutMismatchError(
            f"projection vectors must have dim {layout.dim_proj}"
        )
    nf, dp = layout.n_x, layout.dim_phi
    pc, ps = _gather_proj(query_proj, nf, dp)
    qc, qs = _gather_proj(db_proj, nf, dp)
    betas = np.einsum("uf,uf->u", pc, qc) + np.einsum("uf,uf->u", ps, qs)
    gammas = (np.einsum("uf,uf->u", ps, qc) - np.einsum("uf,uf->u", pc, qs))[1:]
    return TrigPoly1D(
        frequencies=layout.omega_x, betas=betas, gammas=gammas, norm_product=norm_prod
    )


def eval_poly1d(poly: TrigPoly1D, delta: float) -> float:
    """Raw (unnormalized) score at a normalized shift."""
    w = poly.frequencies
    return float(
        poly.betas @ np.cos(w * delta) + poly.gammas @ np.sin(w[1:] * delta)
    )


@lru_cache(maxsize=64)
def _pref_order_1d(offsets_key: tuple) -> np.ndarray:
    offsets = np.array(offsets_key)
    return np.lexsort((offsets, np.abs(offsets)))


def _basis_1d(grid: TranslationGrid, frequencies: tuple) -> tuple[np.ndarray, np.ndarray]:
    w = np.array(frequencies)
    phase = np.outer(grid.offsets_norm, w)
    return np.cos(phase), np.sin(phase[:, 1:])


def max_poly1d(poly: TrigPoly1D, grid: TranslationGrid) -> tuple[float, int]:
    """Normalized maximum over the grid and its argmax shift in pixels.

    Ties prefer the smallest magnitude shift, negative first.
    """
    cos_t, sin_t = _basis_1d(grid, tuple(poly.frequencies))
    scores = cos_t @ poly.betas + sin_t @ poly.gammas
    order = _pref_order_1d(tuple(int(o) for o in grid.offsets))
    best = order[int(np.argmax(scores[order]))]
    return float(scores[best] / poly.norm_product), int(grid.offsets[best])


# ---------------------------------------------------------------------------
# 2D polynomial


@dataclass(frozen=True)
class TrigPoly2D:
    """Coefficients over frequency pairs for the four trig basis products.

    Arrays are (n_x, n_x); rows/columns pairing a sine with frequency zero
    are structurally zero, leaving (2 n_x - 1)^2 free coefficients.
    """

    frequencies: np.ndarray
    cc: np.ndarray
    sc: np.ndarray
    cs: np.ndarray
    ss: np.ndarray
    norm_product: float

    @property
    def n_coefficients(self) -> int:
        n = self.frequencies.shape[0]
        return 4 * (n - 1) ** 2 + 4 * (n - 1) + 1


def poly2d(
    query_full: np.ndarray,
    db_full: np.ndarray,
    layout: EmbeddingLayout,
    norm_prod: float,
) -> TrigPoly2D:
    """Coefficients of the score-vs-2D-translation polynomial."""
    if query_full.shape != (layout.dim_full,) or db_full.shape != (layout.dim_full,):
        raise LayoutMismatchError(f"full vectors must have dim {layout.dim_full}")
    nf, dp = layout.n_x, layout.dim_phi
    pcc, psc, pcs, pss = _gather_full(query_full, nf, dp)
    qcc, qsc, qcs, qss = _gather_full(db_full, nf, dp)

    def dot(a, b):
        return np.einsum("uvf,uvf->uv", a, b)

    cc = dot(pcc, qcc) + dot(psc, qsc) + dot(pcs, qcs) + dot(pss, qss)
    sc = dot(psc, qcc) - dot(pcc, qsc) + dot(pss, qcs) - dot(pcs, qss)
    cs = dot(pcs, qcc) + dot(pss, qsc) - dot(pcc, qcs) - dot(psc, qss)
    ss = dot(pss, qcc) - dot(pcs, qsc) - dot(psc, qcs) + dot(pcc, qss)
    return TrigPoly2D(
        frequencies=layout.omega_x, cc=cc, sc=sc, cs=cs, ss=ss,
        norm_product=norm_prod,
    )


def eval_poly2d(poly: TrigPoly2D, dx: float, dy: float) -> float:
    """Raw score at a normalized 2D translation."""
    w = poly.frequencies
    cx, sx = np.cos(w * dx), np.sin(w * dx)
    cy, sy = np.cos(w * dy), np.sin(w * dy)
    return float(
        cx @ poly.cc @ cy + sx @ poly.sc @ cy + cx @ poly.cs @ sy + sx @ poly.ss @ sy
    )


def _grid_scores(poly: TrigPoly2D, grid: TranslationGrid) -> np.ndarray:
    """Raw scores over the full 2D grid, shape (n_offsets, n_offsets)."""
    w = poly.frequencies
    phase = np.outer(grid.offsets_norm, w)
    cos_t, sin_t = np.cos(phase), np.sin(phase)
    return (
        cos_t @ poly.cc @ cos_t.T
        + sin_t @ poly.sc @ cos_t.T
        + cos_t @ poly.cs @ sin_t.T
        + sin_t @ poly.ss @ sin_t.T
    )


@lru_cache(maxsize=64)
def _pref_order_2d(offsets_key: tuple) -> np.ndarray:
    offsets = np.array(offsets_key)
    t = offsets.shape[0]
    dx = np.repeat(offsets, t)
    dy = np.tile(offsets, t)
    return np.lexsort((dy, np.abs(dy), dx, np.abs(dx)))


def _argmax_2d(
    scores: np.ndarray, offsets: np.ndarray
) -> tuple[float, tuple[int, int]]:
    order = _pref_order_2d(tuple(int(o) for o in offsets))
    flat = scores.ravel()
    best = order[int(np.argmax(flat[order]))]
    t = offsets.shape[0]
    return float(flat[best]), (int(offsets[best // t]), int(offsets[best % t]))


def max_poly2d(
    poly: TrigPoly2D, grid: TranslationGrid
) -> tuple[float, tuple[int, int]]:
    """Normalized maximum over the 2D grid and its argmax in pixels.

    Ties apply the 1D preference lexicographically: first the x offset
    (smallest magnitude, negative first), then the y offset.
    """
    raw, shift = _argmax_2d(_grid_scores(poly, grid), grid.offsets)
    return raw / poly.norm_product, shift


def refine_local(
    poly: TrigPoly2D,
    grid: TranslationGrid,
    center: tuple[int, int],
    n: int,
) -> tuple[float, tuple[int, int]]:
    """Exact polynomial max over an n x n step-spaced patch of the grid.

    The patch is clipped to the grid's reach, so a patch covering the whole
    grid reproduces the exhaustive maximum.
    """
    if n < 1 or n % 2 == 0:
        raise ValueError(f"neighborhood size must be odd and positive, got {n}")
    half = (n - 1) // 2
    cx, cy = center
    span = np.arange(-half, half + 1) * grid.step
    offs_x = cx + span
    offs_y = cy + span
    keep_x = np.abs(offs_x) <= grid.max_shift
    keep_y = np.abs(offs_y) <= grid.max_shift
    offs_x = offs_x[keep_x]
    offs_y = offs_y[keep_y]
    w = poly.frequencies
    px = np.outer(offs_x * PX_TO_NORM, w)
    py = np.outer(offs_y * PX_TO_NORM, w)
    cos_x, sin_x = np.cos(px), np.sin(px)
    cos_y, sin_y = np.cos(py), np.sin(py)
    scores = (
        cos_x @ poly.cc @ cos_y.T
        + sin_x @ poly.sc @ cos_y.T
        + cos_x @ poly.cs @ sin_y.T
        + sin_x @ poly.ss @ sin_y.T
    )
    # same tie rule as the exhaustive search, restricted to the patch
    best = min(
        (-scores[i, j], abs(ox), ox, abs(oy), oy, i, j)
        for i, ox in enumerate(offs_x)
        for j, oy in enumerate(offs_y)
    )
    _, _, ox, _, oy, i, j = best
    return float(scores[i, j] / poly.norm_product), (int(ox), int(oy))


# ---------------------------------------------------------------------------
# Binary surrogate


@dataclass(frozen=True)
class BinaryBasis:
    """Sign bits of every basis product at every grid translation.

    Shared by all database items for one (grid, layout) pair: built once
    per query scale. Translation rows are stored in tie-preference order,
    so a plain first-maximum argmax honors the shared tie rule.
    """

    grid: TranslationGrid
    n_freq: int
    bits: np.ndarray  # (n_translations, n_words) packed signs, uint64
    n_slots: int
    slot_kind: np.ndarray  # 0=cc 1=sc 2=cs 3=ss, per flat slot
    slot_u: np.ndarray
    slot_v: np.ndarray
    translations: np.ndarray  # (n_translations, 2) pixel offsets


def _slot_index(n_freq: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kinds, us, vs = [], [], []
    for u in range(n_freq):
        for v in range(n_freq):
            kinds.append(0); us.append(u); vs.append(v)
            if u > 0:
                kinds.append(1); us.append(u); vs.append(v)
            if v > 0:
                kinds.append(2); us.append(u); vs.append(v)
            if u > 0 and v > 0:
                kinds.append(3); us.append(u); vs.append(v)
    return np.array(kinds), np.array(us), np.array(vs)


_basis_cache: dict[tuple, "BinaryBasis"] = {}


def binary_basis(grid: TranslationGrid, layout: EmbeddingLayout) -> BinaryBasis:
    """Basis sign table for one (grid, layout); built once and cached."""
    key = (
        grid.scale, grid.max_shift, grid.step,
        layout.omega_x.tobytes(), layout.n_phi,
    )
    cached = _basis_cache.get(key)
    if cached is not None:
        return cached
    basis = _binary_basis_uncached(grid, layout)
    _basis_cache[key] = basis
    return basis


def pack_sign_words(signs: np.ndarray) -> np.ndarray:
    """Pack boolean sign rows into uint64 words for cheap Hamming math."""
    bits = np.packbits(signs, axis=-1)
    pad = (-bits.shape[-1]) % 8
    if pad:
        bits = np.concatenate(
            [bits, np.zeros((*bits.shape[:-1], pad), dtype=np.uint8)], axis=-1
        )
    return bits.view(np.uint64)


def _binary_basis_uncached(grid: TranslationGrid, layout: EmbeddingLayout) -> BinaryBasis:
    kinds, us, vs = _slot_index(layout.n_x)
    w = layout.omega_x
    offs = grid.offsets
    t = offs.shape[0]
    order = _pref_order_2d(tuple(int(o) for o in offs))
    dx = np.repeat(offs, t)[order]
    dy = np.tile(offs, t)[order]
    phase_x = np.outer(dx * PX_TO_NORM, w)
    phase_y = np.outer(dy * PX_TO_NORM, w)
    cos_x, sin_x = np.cos(phase_x), np.sin(phase_x)
    cos_y, sin_y = np.cos(phase_y), np.sin(phase_y)
    x_part = np.where(kinds[None, :] % 2 == 0, cos_x[:, us], sin_x[:, us])
    y_part = np.where(kinds[None, :] < 2, cos_y[:, vs], sin_y[:, vs])
    values = x_part * y_part
    return BinaryBasis(
        grid=grid,
        n_freq=layout.n_x,
        bits=pack_sign_words(values >= 0),
        n_slots=kinds.shape[0],
        slot_kind=kinds,
        slot_u=us,
        slot_v=vs,
        translations=np.column_stack([dx, dy]),
    )


@dataclass(frozen=True)
class BinaryPoly2D:
    coeff_bits: np.ndarray  # packed signs of the flat coefficients
    basis: BinaryBasis


def flatten_coefficients(poly: TrigPoly2D, basis: BinaryBasis) -> np.ndarray:
    stack = np.stack([poly.cc, poly.sc, poly.cs, poly.ss])
    return stack[basis.slot_kind, basis.slot_u, basis.slot_v]


def binarize(poly: TrigPoly2D, basis: BinaryBasis) -> BinaryPoly2D:
    if poly.frequencies.shape[0] != basis.n_freq:
        raise LayoutMismatchError("polynomial and basis disagree on layout")
    coeffs = flatten_coefficients(poly, basis)
    return BinaryPoly2D(coeff_bits=pack_sign_words(coeffs >= 0), basis=basis)


def binary_agreements(bpoly: BinaryPoly2D) -> np.ndarray:
    """Per-translation count of sign agreements (N2 - 2 * Hamming).

    Packing pads both operands with zero bits, which XOR away, so the pad
    never contributes to the Hamming distance. Entries follow the basis's
    tie-preference row order.
    """
    basis = bpoly.basis
    xor = np.bitwise_xor(basis.bits, bpoly.coeff_bits[None, :])
    hamming = np.bitwise_count(xor).sum(axis=1)
    return basis.n_slots - 2 * hamming.astype(int)


def max_binary(bpoly: BinaryPoly2D) -> tuple[int, tuple[int, int]]:
    """Surrogate maximum: translation with the most sign agreements."""
    agree = binary_agreements(bpoly)
    best = int(np.argmax(agree))  # rows are already in tie-preference order
    dx, dy = bpoly.basis.translations[best]
    return int(agree[best]), (int(dx), int(dy))
