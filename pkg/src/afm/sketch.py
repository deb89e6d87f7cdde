"""Contour ingestion and sketch descriptors.

A sketch or edge map is a set of contour points (x, y, phi, w). Points are
aggregated into one tensor-product descriptor per image plus the two axis
projections; on the database side the projections are sub-vectors of the
full descriptor and nine norms (full/x/y for each of the three search
kernels) are stored so cosine similarities need no further database-side
work.

Coordinates are normalized so the longer image side maps to LAMBDA_MAX,
which keeps all spatial lags inside the approximation interval for
400-pixel images and the +-80 px translation search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from . import maps
from .kernels import LAMBDA_MAX
from .maps import AxisSpectra, MapMode, Weighting

CANONICAL_SIDE = 400  # px; the "longer side" every image is notionally scaled to
STRENGTH_THRESHOLD = 0.2
QUERY_SCALES = (1.0, 0.8, 0.6)
# Smaller query scale pairs with the narrower kernel; spatial weight rows
# are ordered by ascending sigma (0.12, 0.16, 0.20).
SCALE_KERNEL = {1.0: 2, 0.8: 1, 0.6: 0}


class ContourPoint(NamedTuple):
    x: float
    y: float
    phi: float
    w: float


class EmptySketchError(ValueError):
    pass


class PointListFormatError(ValueError):
    pass


def points_array(points) -> np.ndarray:
    """Normalize any point collection to an (n, 4) float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 4:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected (n, 4) contour points, got shape {arr.shape}")
    return arr


def px_to_norm(width: int, height: int) -> float:
    return LAMBDA_MAX / max(width, height)


# ---------------------------------------------------------------------------
# Point-list files


def dump_pointlist(points_px: np.ndarray, width: int, height: int) -> str:
    lines = [f"AFM-POINTS v1 width={width} height={height}"]
    for x, y, phi, w in points_px:
        lines.append(
            f"{format(x, '.17g')} {format(y, '.17g')} "
            f"{format(phi, '.17g')} {format(w, '.17g')}"
        )
    return "\n".join(lines) + "\n"


def parse_pointlist(text: str) -> tuple[np.ndarray, int, int]:
    """Raw pixel-coordinate points plus image dimensions, unfiltered."""
    lines = text.splitlines()
    if not lines:
        raise PointListFormatError("empty point-list file")
    header = lines[0].split()
    if header[:2] != ["AFM-POINTS", "v1"]:
        raise PointListFormatError(f"bad point-list header: {lines[0]!r}")
    fields = dict(part.split("=", 1) for part in header[2:])
    width, height = int(fields["width"]), int(fields["height"])
    rows = []
    for ln_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) != 4:
            raise PointListFormatError(
                f"line {ln_no}: expected 'x y phi w', got {line!r}"
            )
        try:
            rows.append([float(v) for v in cols])
        except ValueError as exc:
            raise PointListFormatError(f"line {ln_no}: {exc}") from exc
    pts = np.array(rows, dtype=float).reshape(-1, 4)
    return pts, width, height


def ingest_pointlist(source) -> np.ndarray:
    """Read a point-list file/str: filter weak points, normalize coords.

    Pixel coordinates are scaled so the longer image side spans
    [0, LAMBDA_MAX]; orientations wrap into [0, 2pi); points below the
    strength threshold are discarded.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    pts, width, height = parse_pointlist(text)
    if pts.shape[0]:
        pts = pts[pts[:, 3] >= STRENGTH_THRESHOLD]
    if pts.shape[0] == 0:
        raise EmptySketchError("no contour points above the strength threshold")
    scale = px_to_norm(width, height)
    out = pts.copy()
    out[:, 0] *= scale
    out[:, 1] *= scale
    out[:, 2] = np.mod(out[:, 2], 2 * math.pi)
    return out


def load_pointlist(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        return ingest_pointlist(fh)


# ---------------------------------------------------------------------------
# Minimal gradient-based rasterizer (stand-in for a learned edge detector)


class RasterFormatError(ValueError):
    pass


def _gradient_field(strength: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    smoothed = gaussian_filter(strength, sigma=1.0, mode="nearest")
    gy, gx = np.gradient(smoothed)  # central differences, rows are y
    return gx, gy


def points_from_strength(strength: np.ndarray) -> np.ndarray:
    """Contour points of a grayscale edge-strength map, pixel coordinates.

    Keeps pixels above the strength threshold; the orientation comes from
    the smoothed strength gradient at the pixel.
    """
    strength = np.asarray(strength, dtype=float)
    gx, gy = _gradient_field(strength)
    ys, xs = np.nonzero(strength > STRENGTH_THRESHOLD)
    if xs.size == 0:
        raise EmptySketchError("no pixels above the strength threshold")
    phi = np.mod(np.arctan2(gy[ys, xs], gx[ys, xs]), 2 * math.pi)
    return np.column_stack([xs.astype(float), ys.astype(float), phi, strength[ys, xs]])


def points_from_binary(ink: np.ndarray) -> np.ndarray:
    """Contour points of a binary sketch, pixel coordinates.

    The drawing is treated as dark-on-light: edge strength is the gradient
    magnitude of the smoothed luminance (1 - ink), normalized to peak 1, so
    a filled region contributes its outline with outward-facing gradients.
    All points carry unit weight.
    """
    ink = np.asarray(ink, dtype=float)
    luminance = 1.0 - ink
    gx, gy = _gradient_field(luminance)
    mag = np.hypot(gx, gy)
    peak = float(mag.max())
    if peak <= 0:
        raise EmptySketchError("blank sketch")
    mag /= peak
    ys, xs = np.nonzero(mag > STRENGTH_THRESHOLD)
    if xs.size == 0:
        raise EmptySketchError("no edge response above the strength threshold")
    phi = np.mod(np.arctan2(gy[ys, xs], gx[ys, xs]), 2 * math.pi)
    w = np.ones(xs.size)
    return np.column_stack([xs.astype(float), ys.astype(float), phi, w])


def _parse_pnm(data: bytes) -> tuple[str, np.ndarray]:
    tokens = []
    pos = 0
    # Header tokens with '#' comments; P4/P5 payloads are binary after the
    # final header token.
    while len(tokens) < 4 and pos < len(data):
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end == -1 else end + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
        if tokens[0] in (b"P1", b"P4") and len(tokens) == 3:
            break
    magic = tokens[0].decode("ascii")
    if magic in ("P1", "P4"):
        width, height = int(tokens[1]), int(tokens[2])
    elif magic in ("P2", "P5"):
        width, height = int(tokens[1]), int(tokens[2])
        maxval = int(tokens[3])
    else:
        raise RasterFormatError(f"unsupported raster magic {magic!r}")
    pos += 1  # single whitespace after the header

    if magic == "P4":
        row_bytes = (width + 7) // 8
        raw = np.frombuffer(data, dtype=np.uint8, count=row_bytes * height, offset=pos)
        bits = np.unpackbits(raw.reshape(height, row_bytes), axis=1)[:, :width]
        return "pbm", bits.astype(float)
    if magic == "P1":
        # P1 bits may be packed without whitespace.
        flat = np.array([c - 48 for c in data[pos:] if c in (48, 49)], dtype=float)
        return "pbm", flat[: width * height].reshape(height, width)
    if magic == "P5":
        if maxval >= 256:
            raise RasterFormatError("16-bit PGM not supported")
        raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
        return "pgm", raw.reshape(height, width).astype(float) / maxval
    digits = data[pos:].split()
    flat = np.array([int(tok) for tok in digits], dtype=float)
    return "pgm", flat[: width * height].reshape(height, width) / maxval


def rasterize_pnm(data: bytes) -> np.ndarray:
    """Contour points (pixel coordinates) from PBM sketches or PGM maps."""
    kind, image = _parse_pnm(data)
    if kind == "pbm":
        return points_from_binary(image)
    return points_from_strength(image)


def normalize_points(points_px: np.ndarray, width: int, height: int) -> np.ndarray:
    out = points_array(points_px).copy()
    scale = px_to_norm(width, height)
    out[:, 0] *= scale
    out[:, 1] *= scale
    out[:, 2] = np.mod(out[:, 2], 2 * math.pi)
    return out


# ---------------------------------------------------------------------------
# Descriptors


@dataclass(frozen=True)
class NormBlock:
    """Nine stored scalars: full/x/y norms for each search kernel."""

    full: np.ndarray  # (n_kernels,)
    proj_x: np.ndarray
    proj_y: np.ndarray

    def get(self, kind: str, kernel_index: int) -> float:
        return float(getattr(self, kind)[kernel_index])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.full, self.proj_x, self.proj_y])

    @staticmethod
    def from_vector(vec: np.ndarray, n_kernels: int = 3) -> "NormBlock":
        vec = np.asarray(vec, dtype=float)
        return NormBlock(
            full=vec[:n_kernels].copy(),
            proj_x=vec[n_kernels : 2 * n_kernels].copy(),
            proj_y=vec[2 * n_kernels :].copy(),
        )


@dataclass(frozen=True)
class SketchDescriptor:
    full: np.ndarray
    proj_x: np.ndarray
    proj_y: np.ndarray
    mode: MapMode
    norms: NormBlock | None = None
    source_id: str = ""
    scale: float = 1.0
    mirrored: bool = False


def compute_norms(full: np.ndarray, spectra: AxisSpectra) -> NormBlock:
    """Per-kernel norms of an unweighted descriptor.

    The stored database vector is weight-free; the norm that normalizes a
    kernel's cosine similarity is the norm of the sqrt(alpha)-weighted
    vector, recomputable from the stored one at any time.
    """
    layout = spectra.layout()
    idx_x = maps.projection_indices(layout, "x")
    idx_y = maps.projection_indices(layout, "y")
    n_k = spectra.n_kernels
    nf = np.empty(n_k)
    nx = np.empty(n_k)
    ny = np.empty(n_k)
    for k in range(n_k):
        wf = spectra.weight_full(k)
        wp = spectra.weight_proj(k)
        nf[k] = np.linalg.norm(wf * full)
        nx[k] = np.linalg.norm(wp * full[idx_x])
        ny[k] = np.linalg.norm(wp * full[idx_y])
    return NormBlock(full=nf, proj_x=nx, proj_y=ny)


def build_descriptor(
    points, spectra: AxisSpectra, mode: MapMode, source_id: str = ""
) -> SketchDescriptor:
    """Weighted sum of per-point tensor embeddings, plus projections.

    Database mode stores the projections as sub-vector copies of the full
    descriptor and fills in the nine norms; weighted modes compute the
    projections directly since their weighting breaks the sub-vector
    identity.
    """
    pts = points_array(points)
    if pts.shape[0] == 0:
        raise EmptySketchError("cannot build a descriptor from zero points")
    layout = spectra.layout()
    w = pts[:, 3]
    per_point = maps.embed_points_full(pts[:, 0], pts[:, 1], pts[:, 2], spectra, mode)
    full = (w[:, None] * per_point).sum(axis=0)
    if mode.weighting is Weighting.DATABASE:
        proj_x = full[maps.projection_indices(layout, "x")].copy()
        proj_y = full[maps.projection_indices(layout, "y")].copy()
        norms = compute_norms(full, spectra)
    else:
        ex = maps.embed_points_projection(pts[:, 0], pts[:, 2], spectra, mode)
        ey = maps.embed_points_projection(pts[:, 1], pts[:, 2], spectra, mode)
        proj_x = (w[:, None] * ex).sum(axis=0)
        proj_y = (w[:, None] * ey).sum(axis=0)
        norms = None
    return SketchDescriptor(
        full=full,
        proj_x=proj_x,
        proj_y=proj_y,
        mode=mode,
        norms=norms,
        source_id=source_id,
    )


# ---------------------------------------------------------------------------
# Query-side preparation


def crop_and_normalize(points) -> np.ndarray:
    """Tight-crop a sketch, scale its longer bbox side to LAMBDA_MAX, and
    center the bbox in the domain.

    Centering puts the sketch where a database object with zero planted
    translation sits, so the translation search starts from aligned
    centers.
    """
    pts = points_array(points)
    if pts.shape[0] == 0:
        raise EmptySketchError("cannot crop an empty sketch")
    mins = pts[:, :2].min(axis=0)
    maxs = pts[:, :2].max(axis=0)
    longer = float((maxs - mins).max())
    out = pts.copy()
    mid = 0.5 * (mins + maxs)
    out[:, :2] -= mid
    if longer > 0:
        out[:, :2] *= LAMBDA_MAX / longer
    out[:, :2] += LAMBDA_MAX / 2.0
    return out


def scale_points(points, s: float) -> np.ndarray:
    """Scale coordinates about the center of the normalized domain."""
    out = points_array(points).copy()
    c = LAMBDA_MAX / 2.0
    out[:, :2] = c + s * (out[:, :2] - c)
    return out


def mirror_points(points) -> np.ndarray:
    """Horizontal mirror: x -> LAMBDA_MAX - x, phi -> pi - phi (mod 2pi)."""
    out = points_array(points).copy()
    out[:, 0] = LAMBDA_MAX - out[:, 0]
    out[:, 2] = np.mod(math.pi - out[:, 2], 2 * math.pi)
    return out


@dataclass(frozen=True)
class QueryVariant:
    """One (scale, mirror) view of the query with its kernel's norms."""

    descriptor: SketchDescriptor
    scale: float
    mirrored: bool
    kernel_index: int
    norm_full: float
    norm_x: float
    norm_y: float


@dataclass(frozen=True)
class QueryBundle:
    variants: tuple[QueryVariant, ...]
    points: np.ndarray  # cropped, normalized, unmirrored scale-1.0 points
    bbox: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax (normalized)

    def __iter__(self):
        return iter(self.variants)


def _query_variant(
    pts: np.ndarray, spectra: AxisSpectra, s: float, mirrored: bool
) -> QueryVariant:
    kern = SCALE_KERNEL[s]
    raw = build_descriptor(pts, spectra, maps.DATABASE)
    wf = spectra.weight_full(kern)
    wp = spectra.weight_proj(kern)
    desc = SketchDescriptor(
        full=spectra.weight_full(kern, sym=False) * raw.full,
        proj_x=spectra.weight_proj(kern, sym=False) * raw.proj_x,
        proj_y=spectra.weight_proj(kern, sym=False) * raw.proj_y,
        mode=maps.query(kern),
        scale=s,
        mirrored=mirrored,
    )
    return QueryVariant(
        descriptor=desc,
        scale=s,
        mirrored=mirrored,
        kernel_index=kern,
        norm_full=float(np.linalg.norm(wf * raw.full)),
        norm_x=float(np.linalg.norm(wp * raw.proj_x)),
        norm_y=float(np.linalg.norm(wp * raw.proj_y)),
    )


def prepare_query(
    points, spectra: AxisSpectra, mirror: bool = True
) -> QueryBundle:
    """Crop, renormalize, and expand a sketch into its search variants.

    Three scales are generated by shrinking coordinates about the domain
    center, each paired with its kernel (smaller scale, narrower kernel);
    each scale is optionally mirrored, giving up to six query descriptors
    in query weighting with their norms.
    """
    base = crop_and_normalize(points)
    mins = base[:, :2].min(axis=0)
    maxs = base[:, :2].max(axis=0)
    variants = []
    for s in QUERY_SCALES:
        scaled = scale_points(base, s)
        variants.append(_query_variant(scaled, spectra, s, mirrored=False))
        if mirror:
            variants.append(
                _query_variant(mirror_points(scaled), spectra, s, mirrored=True)
            )
    return QueryBundle(
        variants=tuple(variants),
        points=base,
        bbox=(float(mins[0]), float(mins[1]), float(maxs[0]), float(maxs[1])),
    )


# ---------------------------------------------------------------------------
# 1-byte quantization


@dataclass(frozen=True)
class QuantizedDescriptor:
    codes: np.ndarray  # uint8, canonical ordering
    scale: float  # m: codes span [-m, m]
    norms: NormBlock


def quantize_u8(desc: SketchDescriptor, spectra: AxisSpectra) -> QuantizedDescriptor:
    """Uniformly quantize a database descriptor into one byte per component.

    Levels span [-m, m] with m the largest component magnitude; the norms
    are recomputed from the dequantized vector so stored norms always match
    the vector actually used for scoring.
    """
    if desc.mode.weighting is not Weighting.DATABASE:
        raise ValueError("only database-mode descriptors are quantized")
    m = float(np.max(np.abs(desc.full)))
    if m == 0.0:
        codes = np.full(desc.full.shape, 128, dtype=np.uint8)
    else:
        codes = np.round((desc.full + m) / (2.0 * m) * 255.0).astype(np.uint8)
    deq = _dequantize(codes, m)
    return QuantizedDescriptor(codes=codes, scale=m, norms=compute_norms(deq, spectra))


def _dequantize(codes: np.ndarray, m: float) -> np.ndarray:
    return codes.astype(float) / 255.0 * (2.0 * m) - m


def dequantize_u8(
    q: QuantizedDescriptor, spectra: AxisSpectra, source_id: str = ""
) -> SketchDescriptor:
    full = _dequantize(q.codes, q.scale)
    layout = spectra.layout()
    return SketchDescriptor(
        full=full,
        proj_x=full[maps.projection_indices(layout, "x")].copy(),
        proj_y=full[maps.projection_indices(layout, "y")].copy(),
        mode=maps.DATABASE,
        norms=q.norms,
        source_id=source_id,
    )
