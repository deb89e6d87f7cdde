"""Index container, ranking pipeline, re-ranking, QE, and evaluation.

Ranking scores every database entry against all (scale, mirror) query
variants and keeps the best; re-ranking re-scores a shortlist with a more
exact (or cheaper approximate) translation search. All scorers share the
same per-item numerical path so a full-corpus re-rank reproduces direct
ranking bit for bit.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import align, maps
from .align import TranslationGrid, binary_basis
from .kernels import LAMBDA_MAX
from .maps import AxisSpectra
from .sketch import (
    CANONICAL_SIDE,
    NormBlock,
    QueryBundle,
    SketchDescriptor,
    quantize_u8,
)

RERANK_METHODS = ("xy", "xy-star", "local")


class EmptyIndexError(ValueError):
    pass


class QEUnavailableError(RuntimeError):
    pass


class UnknownMethodError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Index


@dataclass
class Index:
    """Immutable-after-build store of database descriptors and norms.

    Descriptors are kept unweighted (database mode) in canonical component
    order; ``norms`` rows hold the nine per-kernel scalars. For a u8 index
    the floats are the dequantized values, so scoring needs no special
    casing, and ``u8_scales`` keeps the per-image quantizer span for exact
    re-serialization.
    """

    ids: list[str]
    full: np.ndarray  # (n, dim_full)
    norms: np.ndarray  # (n, 9)
    spectra: AxisSpectra
    quant: str = "f32"
    u8_scales: np.ndarray | None = None
    u8_codes: np.ndarray | None = None
    aux_ids: list[str] | None = None
    aux: np.ndarray | None = None

    def __post_init__(self):
        self.layout = self.spectra.layout()
        self._pos = {v: i for i, v in enumerate(self.ids)}
        self.proj_x = self.full[:, maps.projection_indices(self.layout, "x")]
        self.proj_y = self.full[:, maps.projection_indices(self.layout, "y")]
        self._full_blocks = None
        self._proj_blocks: dict[str, tuple] = {}

    def __len__(self) -> int:
        return len(self.ids)

    def full_blocks(self):
        """Per-item trig blocks of the full descriptors, built on first use."""
        if self._full_blocks is None:
            self._full_blocks = _gather_db_full(self, np.arange(len(self)))
        return self._full_blocks

    def proj_blocks(self, axis: str):
        if axis not in self._proj_blocks:
            self._proj_blocks[axis] = _gather_db_proj(
                self, np.arange(len(self)), axis
            )
        return self._proj_blocks[axis]

    def position(self, item_id: str) -> int:
        return self._pos[item_id]

    def aux_matrix(self) -> np.ndarray:
        if self.aux is None or self.aux_ids != self.ids:
            if self.aux is None:
                raise QEUnavailableError("index has no auxiliary vectors")
            order = [self.aux_ids.index(i) for i in self.ids]
            return self.aux[order]
        return self.aux


def build_index(
    entries: list[tuple[str, SketchDescriptor]],
    spectra: AxisSpectra,
    quant: str = "f32",
) -> Index:
    """Assemble database descriptors into an index, optionally quantized."""
    if not entries:
        raise EmptyIndexError("no entries to index")
    ids = [e[0] for e in entries]
    if quant == "u8":
        quantized = [quantize_u8(desc, spectra) for _, desc in entries]
        codes = np.stack([q.codes for q in quantized])
        scales = np.array([q.scale for q in quantized])
        full = np.stack(
            [q.codes.astype(float) / 255.0 * (2 * q.scale) - q.scale for q in quantized]
        )
        norms = np.stack([q.norms.as_vector() for q in quantized])
        return Index(
            ids=ids, full=full, norms=norms, spectra=spectra,
            quant="u8", u8_scales=scales, u8_codes=codes,
        )
    if quant != "f32":
        raise ValueError(f"unknown quantization {quant!r}")
    full = np.stack([desc.full for _, desc in entries])
    norms = np.stack([desc.norms.as_vector() for _, desc in entries])
    return Index(ids=ids, full=full, norms=norms, spectra=spectra)


def _norm_block(row: np.ndarray) -> NormBlock:
    return NormBlock.from_vector(row)


# ---------------------------------------------------------------------------
# Index serialization
#
# Header line, then one record per image: an id line followed by the raw
# descriptor payload (f32 little-endian floats, or a f64 quantizer scale
# plus u8 codes) and the nine norms as f64.


def save_index(path, index: Index) -> None:
    layout = index.layout
    with open(path, "wb") as fh:
        fh.write(
            f"AFM-INDEX v1 layout=({layout.n_x},{layout.n_phi}) "
            f"count={len(index)} quant={index.quant}\n".encode("ascii")
        )
        for i, item_id in enumerate(index.ids):
            fh.write((item_id + "\n").encode("utf-8"))
            if index.quant == "u8":
                fh.write(struct.pack("<d", float(index.u8_scales[i])))
                fh.write(index.u8_codes[i].tobytes())
            else:
                fh.write(index.full[i].astype("<f4").tobytes())
            fh.write(index.norms[i].astype("<f8").tobytes())


class IndexFormatError(ValueError):
    pass


def load_index(path, spectra: AxisSpectra) -> Index:
    layout = spectra.layout()
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if header[:2] != ["AFM-INDEX", "v1"]:
            raise IndexFormatError(f"bad index header: {header!r}")
        fields = dict(part.split("=", 1) for part in header[2:])
        nx, nphi = (int(v) for v in fields["layout"].strip("()").split(","))
        if (nx, nphi) != (layout.n_x, layout.n_phi):
            raise IndexFormatError(
                f"index layout ({nx},{nphi}) does not match spectra "
                f"({layout.n_x},{layout.n_phi})"
            )
        count = int(fields["count"])
        quant = fields["quant"]
        dim = layout.dim_full
        ids = []
        fulls = []
        norms = []
        scales = []
        codes_all = []
        for _ in range(count):
            item_id = fh.readline().decode("utf-8").rstrip("\n")
            if quant == "u8":
                (m,) = struct.unpack("<d", fh.read(8))
                codes = np.frombuffer(fh.read(dim), dtype=np.uint8)
                fulls.append(codes.astype(float) / 255.0 * (2 * m) - m)
                scales.append(m)
                codes_all.append(codes)
            else:
                fulls.append(
                    np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(float)
                )
            norms.append(np.frombuffer(fh.read(8 * 9), dtype="<f8").astype(float))
            ids.append(item_id)
    index = Index(
        ids=ids,
        full=np.stack(fulls),
        norms=np.stack(norms),
        spectra=spectra,
        quant=quant,
        u8_scales=np.array(scales) if scales else None,
        u8_codes=np.stack(codes_all) if codes_all else None,
    )
    return index


# ---------------------------------------------------------------------------
# Auxiliary vectors and ground truth


def save_aux(path, ids: list[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"AFM-AUX v1 dim={vectors.shape[1]} count={len(ids)}\n")
        for item_id, vec in zip(ids, vectors):
            cols = " ".join(format(v, ".17g") for v in vec)
            fh.write(f"{item_id} {cols}\n")


def load_aux(path) -> tuple[list[str], np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["AFM-AUX", "v1"]:
            raise IndexFormatError(f"bad aux header: {header!r}")
        fields = dict(part.split("=", 1) for part in header[2:])
        dim, count = int(fields["dim"]), int(fields["count"])
        ids = []
        rows = []
        for _ in range(count):
            cols = fh.readline().split()
            ids.append(cols[0])
            if len(cols) != dim + 1:
                raise IndexFormatError(f"aux row for {cols[0]} has wrong dimension")
            rows.append([float(v) for v in cols[1:]])
    return ids, np.array(rows)


def attach_aux(index: Index, ids: list[str], vectors: np.ndarray) -> Index:
    index.aux_ids = list(ids)
    index.aux = np.asarray(vectors, dtype=float)
    return index


@dataclass(frozen=True)
class GroundTruth:
    positives: dict[str, set[str]]
    similar: dict[str, set[str]] = field(default_factory=dict)


def save_ground_truth(path, gt: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in gt.positives:
            pos = " ".join(sorted(gt.positives[qid]))
            sim = gt.similar.get(qid, set())
            if sim:
                fh.write(f"{qid}: {pos} | {' '.join(sorted(sim))}\n")
            else:
                fh.write(f"{qid}: {pos}\n")


def load_ground_truth(path) -> GroundTruth:
    positives: dict[str, set[str]] = {}
    similar: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            qid, _, rest = line.partition(":")
            qid = qid.strip()
            pos_part, _, sim_part = rest.partition("|")
            positives[qid] = set(pos_part.split())
            if sim_part.strip():
                similar[qid] = set(sim_part.split())
    return GroundTruth(positives=positives, similar=similar)


# ---------------------------------------------------------------------------
# Ranking


class RankedResult(NamedTuple):
    id: str
    score: float
    scale: float
    mirrored: bool
    shift: tuple[int, int]  # (dx, dy) px for 2D stages, (x1, y1) for projections
    stage: str  # 'projection' | 'full' | 'binary-refined'


def _variant_grids(bundle: QueryBundle, grids: dict[float, TranslationGrid] | None):
    if grids is None:
        grids = align.default_grids()
    return grids


def _gather_db_full(index: Index, items: np.ndarray):
    """Database-side trig blocks for a batch of items, shared by variants."""
    layout = index.layout
    nf, dp = layout.n_x, layout.dim_phi
    d = layout.dim_x
    t = index.full[items].reshape(len(items), d, d, dp)
    cos_pos, sin_pos = align._axis_positions(nf)
    qcc = t[:, cos_pos][:, :, cos_pos]
    qsc = np.zeros_like(qcc)
    qcs = np.zeros_like(qcc)
    qss = np.zeros_like(qcc)
    qsc[:, 1:] = t[:, sin_pos[1:]][:, :, cos_pos]
    qcs[:, :, 1:] = t[:, cos_pos][:, :, sin_pos[1:]]
    qss[:, 1:, 1:] = t[:, sin_pos[1:]][:, :, sin_pos[1:]]
    return qcc, qsc, qcs, qss


def _batch_coefficients(index: Index, variants, items: np.ndarray, db_blocks=None):
    """2D polynomial coefficients of every query variant against items.

    One stacked contraction per basis pair keeps the per-call overhead off
    the shortlist path. Returns four (n_variants, n_items, n_x, n_x)
    arrays. Items are expected in ascending index order so identical item
    sets always take the identical numerical path.
    """
    layout = index.layout
    nf, dp = layout.n_x, layout.dim_phi
    blocks = [align._gather_full(v.descriptor.full, nf, dp) for v in variants]
    pcc, psc, pcs, pss = (np.stack([b[i] for b in blocks]) for i in range(4))
    qcc, qsc, qcs, qss = db_blocks if db_blocks is not None else _gather_db_full(
        index, items
    )

    def dot(a, b):
        return np.einsum("wuvf,kuvf->wkuv", a, b)

    cc = dot(pcc, qcc) + dot(psc, qsc) + dot(pcs, qcs) + dot(pss, qss)
    sc = dot(psc, qcc) - dot(pcc, qsc) + dot(pss, qcs) - dot(pcs, qss)
    cs = dot(pcs, qcc) + dot(pss, qsc) - dot(pcc, qcs) - dot(psc, qss)
    ss = dot(pss, qcc) - dot(pcs, qsc) - dot(psc, qcs) + dot(pcc, qss)
    return cc, sc, cs, ss


def _batch_poly2d_max(
    cc, sc, cs, ss, frequencies: np.ndarray, grid: TranslationGrid
):
    phase = np.outer(grid.offsets_norm, frequencies)
    cos_t, sin_t = np.cos(phase), np.sin(phase)
    # (k,u,v)@(v,s) then (t,u)@(k,u,s): two BLAS passes per basis term
    scores = cos_t @ (cc @ cos_t.T + cs @ sin_t.T) + sin_t @ (
        sc @ cos_t.T + ss @ sin_t.T
    )
    flat = scores.reshape(scores.shape[0], -1)
    order = align._pref_order_2d(tuple(int(o) for o in grid.offsets))
    best = order[np.argmax(flat[:, order], axis=1)]
    tsize = grid.size
    dx = grid.offsets[best // tsize]
    dy = grid.offsets[best % tsize]
    return flat[np.arange(flat.shape[0]), best], dx, dy


def _fuse_variants(per_variant, ids, stage: str) -> list[RankedResult]:
    """Keep each item's best variant; ties prefer the earlier variant in
    the bundle's canonical order."""
    scores = np.stack([v[0] for v in per_variant])
    pick = np.argmax(scores, axis=0)
    cols = np.arange(scores.shape[1])
    best = scores[pick, cols].tolist()
    dx = np.stack([v[2] for v in per_variant])[pick, cols].tolist()
    dy = np.stack([v[3] for v in per_variant])[pick, cols].tolist()
    meta = [(v[1].scale, v[1].mirrored) for v in per_variant]
    pick = pick.tolist()
    return [
        RankedResult(
            id=item_id,
            score=s,
            scale=meta[p][0],
            mirrored=meta[p][1],
            shift=(int(x), int(y)),
            stage=stage,
        )
        for item_id, s, p, x, y in zip(ids, best, pick, dx, dy)
    ]


def _sorted_results(results: list[RankedResult]) -> list[RankedResult]:
    return sorted(results, key=lambda r: (-r.score, r.id))


def score_full(
    index: Index,
    bundle: QueryBundle,
    grids: dict[float, TranslationGrid] | None = None,
    items: np.ndarray | None = None,
) -> list[RankedResult]:
    """Exhaustive translation-grid scores for the given items (id order)."""
    grids = _variant_grids(bundle, grids)
    if items is None:
        items = np.arange(len(index))
    items = np.sort(np.asarray(items, dtype=int))
    variants = list(bundle)
    cc, sc, cs, ss = _batch_coefficients(index, variants, items)
    per_variant = []
    for w, variant in enumerate(variants):
        grid = grids[variant.scale]
        raw, dx, dy = _batch_poly2d_max(
            cc[w], sc[w], cs[w], ss[w], index.layout.omega_x, grid
        )
        denom = variant.norm_full * index.norms[items, variant.kernel_index]
        per_variant.append((raw / denom, variant, dx, dy))
    ids = [index.ids[i] for i in items]
    return _fuse_variants(per_variant, ids, "full")


def rank_full(
    index: Index,
    bundle: QueryBundle,
    grids: dict[float, TranslationGrid] | None = None,
) -> list[RankedResult]:
    """Rank the whole corpus by the exhaustive 2D polynomial search."""
    if len(index) == 0:
        raise EmptyIndexError("cannot rank an empty index")
    return _sorted_results(score_full(index, bundle, grids))


_trig_cache: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _grid_trig(grid: TranslationGrid, frequencies: np.ndarray):
    key = (grid.scale, grid.max_shift, grid.step, frequencies.tobytes())
    hit = _trig_cache.get(key)
    if hit is None:
        phase = np.outer(grid.offsets_norm, frequencies)
        order = align._pref_order_1d(tuple(int(o) for o in grid.offsets))
        hit = (np.cos(phase), np.sin(phase), order)
        _trig_cache[key] = hit
    return hit


def _gather_db_proj(index: Index, items: np.ndarray, axis: str):
    layout = index.layout
    nf, dp = layout.n_x, layout.dim_phi
    db = (index.proj_x if axis == "x" else index.proj_y)[items]
    t = db.reshape(len(items), layout.dim_x, dp)
    cos_pos, sin_pos = align._axis_positions(nf)
    qc = t[:, cos_pos]
    qs = np.zeros_like(qc)
    qs[:, 1:] = t[:, sin_pos[1:]]
    return qc, qs


def score_projections(
    index: Index,
    bundle: QueryBundle,
    grids: dict[float, TranslationGrid] | None = None,
    items: np.ndarray | None = None,
    axes: tuple[str, ...] = ("x", "y"),
) -> list[RankedResult]:
    """Summed 1D projection scores; shift holds the two 1D argmaxes."""
    grids = _variant_grids(bundle, grids)
    if items is None:
        items = np.arange(len(index))
    items = np.sort(np.asarray(items, dtype=int))
    layout = index.layout
    nf, dp = layout.n_x, layout.dim_phi
    variants = list(bundle)
    k = len(items)
    rows = np.arange(k)
    per_axis = {}
    for axis in axes:
        qc, qs = _gather_db_proj(index, items, axis)
        gathered = [
            align._gather_proj(
                v.descriptor.proj_x if axis == "x" else v.descriptor.proj_y, nf, dp
            )
            for v in variants
        ]
        pc = np.stack([g[0] for g in gathered])
        ps = np.stack([g[1] for g in gathered])
        betas = np.einsum("wuf,kuf->wku", pc, qc) + np.einsum("wuf,kuf->wku", ps, qs)
        gammas = (
            np.einsum("wuf,kuf->wku", ps, qc) - np.einsum("wuf,kuf->wku", pc, qs)
        )[:, :, 1:]
        per_axis[axis] = (betas, gammas)
    per_variant = []
    for w, variant in enumerate(variants):
        grid = grids[variant.scale]
        cos_t, sin_t, order = _grid_trig(grid, layout.omega_x)
        total = np.zeros(k)
        shift_x = np.zeros(k, dtype=int)
        shift_y = np.zeros(k, dtype=int)
        for axis in axes:
            betas, gammas = per_axis[axis]
            scores = betas[w] @ cos_t.T + gammas[w] @ sin_t[:, 1:].T
            best = order[np.argmax(scores[:, order], axis=1)]
            raw = scores[rows, best]
            q_norm = variant.norm_x if axis == "x" else variant.norm_y
            norm_col = 3 if axis == "x" else 6
            denom = q_norm * index.norms[items, norm_col + variant.kernel_index]
            if axis == "x":
                shift_x = grid.offsets[best]
            else:
                shift_y = grid.offsets[best]
            total = total + raw / denom
        per_variant.append((total, variant, shift_x, shift_y))
    ids = [index.ids[i] for i in items]
    return _fuse_variants(per_variant, ids, "projection")


def rank_projections(
    index: Index,
    bundle: QueryBundle,
    grids: dict[float, TranslationGrid] | None = None,
) -> list[RankedResult]:
    if len(index) == 0:
        raise EmptyIndexError("cannot rank an empty index")
    return _sorted_results(score_projections(index, bundle, grids))


def discriminative_axis(bundle: QueryBundle) -> str:
    """The query axis with larger weighted coordinate variance."""
    pts = bundle.points
    w = pts[:, 3]
    totals = w.sum()
    var = []
    for col in (0, 1):
        mean = float((w * pts[:, col]).sum() / totals)
        var.append(float((w * (pts[:, col] - mean) ** 2).sum() / totals))
    return "x" if var[0] >= var[1] else "y"


def rank_discriminative_first(
    index: Index,
    bundle: QueryBundle,
    shortlist_size: int,
    grids: dict[float, TranslationGrid] | None = None,
    pre_factor: int = 3,
) -> list[RankedResult]:
    """Rank by the more discriminative projection, then refine a
    pre-shortlist of ``pre_factor * shortlist_size`` with the other axis.

    Returns the full ranked list: the summed-score top ``shortlist_size``,
    then the rest in first-projection order.
    """
    if len(index) == 0:
        raise EmptyIndexError("cannot rank an empty index")
    first = discriminative_axis(bundle)
    second = "y" if first == "x" else "x"
    stage1 = _sorted_results(score_projections(index, bundle, grids, axes=(first,)))
    pre = stage1[: pre_factor * shortlist_size]
    pre_items = np.array([index.position(r.id) for r in pre])
    both = _sorted_results(
        score_projections(index, bundle, grids, items=pre_items)
    )
    head = both[:shortlist_size]
    head_ids = {r.id for r in head}
    tail = [r for r in stage1 if r.id not in head_ids]
    return head + tail


def rerank(
    index: Index,
    bundle: QueryBundle,
    ranked: list[RankedResult],
    method: str,
    shortlist_size: int | None = None,
    neighborhood: int = 3,
    grids: dict[float, TranslationGrid] | None = None,
) -> list[RankedResult]:
    """Re-score the top of a ranked list with a 2D translation search.

    xy: exhaustive grid polynomial (same path as rank_full).
    xy-star: binary sign surrogate picks the candidate translation per
        variant, then the real polynomial refines an n x n patch there.
    local: real polynomial refined around the projection stage's 1D
        argmaxes, on that stage's best variant only.
    """
    if method not in RERANK_METHODS:
        raise UnknownMethodError(
            f"unknown re-ranking method {method!r}; expected one of {RERANK_METHODS}"
        )
    grids = _variant_grids(bundle, grids)
    if shortlist_size is None:
        shortlist_size = len(ranked)
    shortlist = ranked[:shortlist_size]
    tail = ranked[shortlist_size:]
    items = np.array([index.position(r.id) for r in shortlist], dtype=int)
    if items.size == 0:
        return list(ranked)

    if method == "xy":
        rescored = score_full(index, bundle, grids, items)
    elif method == "xy-star":
        rescored = _score_binary_refined(index, bundle, grids, items, neighborhood)
    else:
        rescored = _score_local_refined(
            index, bundle, grids, shortlist, items, neighborhood
        )
    return _sorted_results(rescored) + tail


def _batch_refine(
    cc, sc, cs, ss, frequencies, steps, max_shifts, centers, neighborhood: int
):
    """Real-polynomial maxima over per-item n x n patches, vectorized.

    ``steps`` and ``max_shifts`` are per-row, so patches from different
    scale grids refine in one pass. Off-grid patch cells (beyond the grid
    reach) are masked out; the tie rule matches the exhaustive search.
    """
    k = cc.shape[0]
    half = (neighborhood - 1) // 2
    span = np.arange(-half, half + 1)
    offs_x = centers[:, 0:1] + span[None, :] * steps[:, None]  # (k, n)
    offs_y = centers[:, 1:2] + span[None, :] * steps[:, None]
    valid_x = np.abs(offs_x) <= max_shifts[:, None]
    valid_y = np.abs(offs_y) <= max_shifts[:, None]
    px = offs_x[:, :, None] * align.PX_TO_NORM * frequencies[None, None, :]
    py = offs_y[:, :, None] * align.PX_TO_NORM * frequencies[None, None, :]
    cos_x, sin_x = np.cos(px), np.sin(px)
    cos_y, sin_y = np.cos(py), np.sin(py)
    cos_y_t = cos_y.transpose(0, 2, 1)
    sin_y_t = sin_y.transpose(0, 2, 1)
    scores = cos_x @ (cc @ cos_y_t + cs @ sin_y_t) + sin_x @ (
        sc @ cos_y_t + ss @ sin_y_t
    )
    valid = valid_x[:, :, None] & valid_y[:, None, :]
    flat = np.where(valid, scores, -np.inf).reshape(k, -1)
    n = span.shape[0]
    dx_flat = np.repeat(offs_x, n, axis=1)
    dy_flat = np.tile(offs_y, (1, n))
    rows = np.repeat(np.arange(k), n * n)
    order = np.lexsort(
        (
            dy_flat.ravel(),
            np.abs(dy_flat).ravel(),
            dx_flat.ravel(),
            np.abs(dx_flat).ravel(),
            -flat.ravel(),
            rows,
        )
    )
    _, first = np.unique(rows[order], return_index=True)
    pick = order[first]
    cols = pick % (n * n)
    raw = flat[np.arange(k), cols]
    return raw, dx_flat[np.arange(k), cols], dy_flat[np.arange(k), cols]


def _score_binary_refined(
    index: Index,
    bundle: QueryBundle,
    grids: dict[float, TranslationGrid],
    items: np.ndarray,
    neighborhood: int,
) -> list[RankedResult]:
    items = np.sort(np.asarray(items, dtype=int))
    layout = index.layout
    variants = list(bundle)
    k = len(items)
    cc_all, sc_all, cs_all, ss_all = _batch_coefficients(index, variants, items)
    centers_all = np.empty((len(variants), k, 2), dtype=int)
    for w, variant in enumerate(variants):
        grid = grids[variant.scale]
        basis = binary_basis(grid, layout)
        stack = np.stack(
            [cc_all[w], sc_all[w], cs_all[w], ss_all[w]], axis=1
        )  # (k, 4, nf, nf)
        flat = stack[:, basis.slot_kind, basis.slot_u, basis.slot_v]
        coeff_bits = np.packbits(flat >= 0, axis=1)
        xor = np.bitwise_xor(basis.bits[None, :, :], coeff_bits[:, None, :])
        agree = basis.n_slots - 2 * np.bitwise_count(xor).sum(axis=2).astype(int)
        order = align._pref_order_2d(tuple(int(o) for o in grid.offsets))
        best = order[np.argmax(agree[:, order], axis=1)]
        centers_all[w] = basis.translations[best]
    # one refinement pass over every (variant, item) row
    w_count = len(variants)
    steps = np.repeat([grids[v.scale].step for v in variants], k)
    max_shifts = np.repeat([grids[v.scale].max_shift for v in variants], k)
    raw, dxs, dys = _batch_refine(
        cc_all.reshape(w_count * k, *cc_all.shape[2:]),
        sc_all.reshape(w_count * k, *sc_all.shape[2:]),
        cs_all.reshape(w_count * k, *cs_all.shape[2:]),
        ss_all.reshape(w_count * k, *ss_all.shape[2:]),
        layout.omega_x,
        steps,
        max_shifts,
        centers_all.reshape(w_count * k, 2),
        neighborhood,
    )
    raw = raw.reshape(w_count, k)
    dxs = dxs.reshape(w_count, k)
    dys = dys.reshape(w_count, k)
    per_variant = []
    for w, variant in enumerate(variants):
        denom = variant.norm_full * index.norms[items, variant.kernel_index]
        per_variant.append((raw[w] / denom, variant, dxs[w], dys[w]))
    ids = [index.ids[i] for i in items]
    return _fuse_variants(per_variant, ids, "binary-refined")


def _score_local_refined(
    index: Index,
    bundle: QueryBundle,
    grids: dict[float, TranslationGrid],
    shortlist: list[RankedResult],
    items: np.ndarray,
    neighborhood: int,
) -> list[RankedResult]:
    variants = {(v.scale, v.mirrored): v for v in bundle}
    layout = index.layout
    results = []
    for prior in shortlist:
        variant = variants[(prior.scale, prior.mirrored)]
        grid = grids[variant.scale]
        k = index.position(prior.id)
        denom = variant.norm_full * float(index.norms[k, variant.kernel_index])
        poly = align.poly2d(
            variant.descriptor.full, index.full[k], layout, denom
        )
        # center the patch on the nearest grid nodes of the 1D argmaxes
        cx = int(grid.offsets[np.argmin(np.abs(grid.offsets - prior.shift[0]))])
        cy = int(grid.offsets[np.argmin(np.abs(grid.offsets - prior.shift[1]))])
        score, shift = align.refine_local(poly, grid, (cx, cy), neighborhood)
        results.append(
            RankedResult(
                id=prior.id,
                score=score,
                scale=variant.scale,
                mirrored=variant.mirrored,
                shift=shift,
                stage="full",
            )
        )
    return results


# ---------------------------------------------------------------------------
# Average query expansion


def average_qe(
    index: Index, ranked: list[RankedResult], top_n: int
) -> list[RankedResult]:
    """Re-rank the whole corpus by similarity to the mean auxiliary vector
    of the current top results; sketch-derived localization is retained."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    aux = index.aux_matrix()
    head = ranked[:top_n]
    mean = aux[[index.position(r.id) for r in head]].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm > 0:
        mean = mean / norm
    scores = aux @ mean
    prior = {r.id: r for r in ranked}
    results = []
    for i, item_id in enumerate(index.ids):
        p = prior.get(item_id)
        results.append(
            RankedResult(
                id=item_id,
                score=float(scores[i]),
                scale=p.scale if p else 1.0,
                mirrored=p.mirrored if p else False,
                shift=p.shift if p else (0, 0),
                stage=p.stage if p else "full",
            )
        )
    return _sorted_results(results)


# ---------------------------------------------------------------------------
# Evaluation


def average_precision(
    ranked_ids: list[str], positives: set[str], ignore: set[str] = frozenset()
) -> float:
    hits = 0
    total = 0
    ap = 0.0
    for item_id in ranked_ids:
        if item_id in ignore and item_id not in positives:
            continue
        total += 1
        if item_id in positives:
            hits += 1
            ap += hits / total
    n_pos = len(positives)
    return ap / n_pos if n_pos else 0.0


def evaluate_map(
    results: dict[str, list[RankedResult]],
    gt: GroundTruth,
    similar_as_positive: bool = False,
) -> float:
    """Mean average precision over queries with known positives."""
    aps = []
    for qid, ranked in results.items():
        positives = set(gt.positives.get(qid, ()))
        sims = set(gt.similar.get(qid, ()))
        if similar_as_positive:
            positives |= sims
            sims = set()
        if not positives:
            warnings.warn(f"query {qid!r} has no positives; excluded from mAP")
            continue
        aps.append(
            average_precision([r.id for r in ranked], positives, ignore=sims)
        )
    return float(np.mean(aps)) if aps else 0.0


def precision_at(
    ranked: list[RankedResult],
    positives: set[str],
    n: int,
    ignore: set[str] = frozenset(),
) -> float:
    kept = [r.id for r in ranked if not (r.id in ignore and r.id not in positives)]
    top = kept[:n]
    if not top:
        return 0.0
    return sum(1 for i in top if i in positives) / n


def evaluate_p_at(
    results: dict[str, list[RankedResult]],
    gt: GroundTruth,
    n: int,
    similar_as_positive: bool = False,
) -> float:
    vals = []
    for qid, ranked in results.items():
        positives = set(gt.positives.get(qid, ()))
        sims = set(gt.similar.get(qid, ()))
        if similar_as_positive:
            positives |= sims
            sims = set()
        if not positives:
            continue
        vals.append(precision_at(ranked, positives, n, ignore=sims))
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------------------
# Localization box


def map_box(
    bundle: QueryBundle, result: RankedResult
) -> tuple[float, float, float, float]:
    """Query bounding box mapped into the database image, canonical pixels.

    Mirror is applied first, then the scale about the domain center, then
    the recovered translation. The polynomial argmax is the offset of the
    query content relative to the database content, so the box moves by its
    negation.
    """
    x0, y0, x1, y1 = bundle.bbox
    if result.mirrored:
        x0, x1 = LAMBDA_MAX - x1, LAMBDA_MAX - x0
    c = LAMBDA_MAX / 2.0
    s = result.scale
    x0, x1 = c + s * (x0 - c), c + s * (x1 - c)
    y0, y1 = c + s * (y0 - c), c + s * (y1 - c)
    to_px = CANONICAL_SIDE / LAMBDA_MAX
    dx, dy = result.shift
    return (
        x0 * to_px - dx,
        y0 * to_px - dy,
        (x1 - x0) * to_px,
        (y1 - y0) * to_px,
    )
