"""Synthetic planted-transform benchmark.

Random closed outlines (smooth star polygons and ellipses) are rendered
into point lists. Each corpus item carries a known plant: a scale from the
query search set, a translation bounded by the in-canvas headroom (capped
at the search reach), and an optional horizontal mirror. Queries are clean
full-frame renderings of a subset of the shapes with pixel jitter, so rank
and localization ground truth are exact by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sketch
from .kernels import LAMBDA_MAX
from .search import GroundTruth
from .sketch import CANONICAL_SIDE


@dataclass(frozen=True)
class Plant:
    source_id: str
    scale: float
    mirrored: bool
    tx: float
    ty: float


@dataclass
class SynthBenchmark:
    canvas: int
    items: dict[str, np.ndarray]  # id -> (n, 4) pixel-coordinate points
    queries: dict[str, np.ndarray]
    ground_truth: GroundTruth
    plants: dict[str, Plant]

    def item_pointlist(self, item_id: str) -> str:
        return sketch.dump_pointlist(self.items[item_id], self.canvas, self.canvas)

    def query_pointlist(self, query_id: str) -> str:
        return sketch.dump_pointlist(self.queries[query_id], self.canvas, self.canvas)

    def write(self, corpus_dir, query_dir) -> None:
        corpus_dir.mkdir(parents=True, exist_ok=True)
        query_dir.mkdir(parents=True, exist_ok=True)
        for item_id in self.items:
            (corpus_dir / f"{item_id}.pts").write_text(self.item_pointlist(item_id))
        for query_id in self.queries:
            (query_dir / f"{query_id}.pts").write_text(self.query_pointlist(query_id))

    def expected_shift_px(self, query_id: str) -> tuple[float, float]:
        """Centroid offset of the matching query variant vs the item, px.

        This is the value the translation argmax estimates on its grid
        (query content position minus database content position).
        """
        plant = self.plants[query_id]
        q = sketch.crop_and_normalize(self.queries[query_id])
        var = sketch.scale_points(q, plant.scale)
        if plant.mirrored:
            var = sketch.mirror_points(var)
        item_norm = sketch.normalize_points(
            self.items[plant.source_id], self.canvas, self.canvas
        )
        delta = var[:, :2].mean(axis=0) - item_norm[:, :2].mean(axis=0)
        to_px = CANONICAL_SIDE / LAMBDA_MAX
        return float(delta[0] * to_px), float(delta[1] * to_px)


# ---------------------------------------------------------------------------
# Outline generators (unit frame, centered at the origin)


def _rotate(pts: np.ndarray, rot: float) -> np.ndarray:
    cr, sr = math.cos(rot), math.sin(rot)
    x = cr * pts[:, 0] - sr * pts[:, 1]
    y = sr * pts[:, 0] + cr * pts[:, 1]
    nx = np.cos(pts[:, 2])
    ny = np.sin(pts[:, 2])
    phi = np.mod(np.arctan2(sr * nx + cr * ny, cr * nx - sr * ny), 2 * math.pi)
    return np.column_stack([x, y, phi, pts[:, 3]])


def _star_outline(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Smooth star: radius 1 plus several strong random harmonics."""
    n_harm = int(rng.integers(3, 6))
    ks = rng.choice(np.arange(2, 10), size=n_harm, replace=False)
    amps = rng.uniform(0.08, 0.3, n_harm)
    phases = rng.uniform(0, 2 * math.pi, n_harm)
    aspect = rng.uniform(0.5, 1.0)

    t = np.linspace(0, 2 * math.pi, n_samples, endpoint=False)
    r = np.ones_like(t)
    dr = np.zeros_like(t)
    for k, a, ph in zip(ks, amps, phases):
        r += a * np.cos(k * t + ph)
        dr += -a * k * np.sin(k * t + ph)
    x = r * np.cos(t)
    y = aspect * r * np.sin(t)
    tx = dr * np.cos(t) - r * np.sin(t)
    ty = aspect * (dr * np.sin(t) + r * np.cos(t))
    phi = np.mod(np.arctan2(-tx, ty), 2 * math.pi)  # outward for CCW travel
    pts = np.column_stack([x, y, phi, np.ones_like(x)])
    return _rotate(pts, rng.uniform(0, 2 * math.pi))


def _polygon_outline(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Random simple polygon: straight edges, corner-rich orientations."""
    n_vert = int(rng.integers(5, 11))
    angles = np.sort(rng.uniform(0, 2 * math.pi, n_vert))
    radii = rng.uniform(0.45, 1.0, n_vert)
    vx = radii * np.cos(angles)
    vy = radii * np.sin(angles)
    edge_len = np.hypot(np.roll(vx, -1) - vx, np.roll(vy, -1) - vy)
    per_edge = np.maximum(2, np.round(n_samples * edge_len / edge_len.sum()).astype(int))
    xs, ys, phis = [], [], []
    for i in range(n_vert):
        j = (i + 1) % n_vert
        frac = np.arange(per_edge[i]) / per_edge[i]
        xs.append(vx[i] + frac * (vx[j] - vx[i]))
        ys.append(vy[i] + frac * (vy[j] - vy[i]))
        ex, ey = vx[j] - vx[i], vy[j] - vy[i]
        phis.append(np.full(per_edge[i], math.atan2(-ex, ey) % (2 * math.pi)))
    x = np.concatenate(xs)
    pts = np.column_stack(
        [x, np.concatenate(ys), np.concatenate(phis), np.ones_like(x)]
    )
    return _rotate(pts, rng.uniform(0, 2 * math.pi))


def _ellipse_outline(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Ellipse with a high-frequency wobble so no two are alike."""
    b = rng.uniform(0.35, 0.8)
    k = int(rng.integers(5, 10))
    a_w = rng.uniform(0.05, 0.12)
    ph = rng.uniform(0, 2 * math.pi)
    t = np.linspace(0, 2 * math.pi, n_samples, endpoint=False)
    r = 1.0 + a_w * np.cos(k * t + ph)
    dr = -a_w * k * np.sin(k * t + ph)
    x = r * np.cos(t)
    y = b * r * np.sin(t)
    tx = dr * np.cos(t) - r * np.sin(t)
    ty = b * (dr * np.sin(t) + r * np.cos(t))
    phi = np.mod(np.arctan2(-tx, ty), 2 * math.pi)
    pts = np.column_stack([x, y, phi, np.ones_like(x)])
    return _rotate(pts, rng.uniform(0, 2 * math.pi))


def random_outline(rng: np.random.Generator, n_samples: int = 420) -> np.ndarray:
    kind = rng.uniform()
    if kind < 0.45:
        return _polygon_outline(rng, n_samples)
    if kind < 0.8:
        return _star_outline(rng, n_samples)
    return _ellipse_outline(rng, n_samples)


# ---------------------------------------------------------------------------
# Rendering


def _render(
    outline: np.ndarray,
    canvas: int,
    span_px: float,
    center: tuple[float, float],
    mirrored: bool = False,
) -> np.ndarray:
    """Place a unit-frame outline so its longer bbox side equals span_px."""
    pts = outline.copy()
    mins = pts[:, :2].min(axis=0)
    maxs = pts[:, :2].max(axis=0)
    mid = 0.5 * (mins + maxs)
    extent = float((maxs - mins).max())
    scale = span_px / extent
    pts[:, 0] = (pts[:, 0] - mid[0]) * scale + center[0]
    pts[:, 1] = (pts[:, 1] - mid[1]) * scale + center[1]
    if mirrored:
        pts[:, 0] = canvas - pts[:, 0]
        pts[:, 2] = np.mod(math.pi - pts[:, 2], 2 * math.pi)
    return pts


def synth_corpus(
    seed: int,
    n_items: int = 1000,
    n_queries: int = 50,
    canvas: int = CANONICAL_SIDE,
    max_shift: float = 80.0,
    jitter: float = 1.0,
    scales=(1.0, 0.8, 0.6),
    mirrors: bool = True,
) -> SynthBenchmark:
    """Corpus of planted shapes plus clean jittered queries.

    The plant translation is drawn per axis within the canvas headroom left
    by the scaled shape (capped at ``max_shift``), so a scale-1.0 item
    stays centered along its long axis while smaller scales roam.
    """
    if n_queries > n_items:
        raise ValueError("cannot have more queries than items")
    rng = np.random.default_rng(seed)
    half = canvas / 2.0
    margin = 2.0
    items: dict[str, np.ndarray] = {}
    plants_all: dict[str, Plant] = {}
    outlines: dict[str, np.ndarray] = {}
    for i in range(n_items):
        item_id = f"item{i:05d}"
        outline = random_outline(rng)
        mins = outline[:, :2].min(axis=0)
        maxs = outline[:, :2].max(axis=0)
        extent = maxs - mins
        aspect = extent / extent.max()
        s = float(rng.choice(scales))
        mirrored = bool(rng.integers(0, 2)) if mirrors else False
        span = s * canvas
        t = np.empty(2)
        for ax in range(2):
            headroom = half - (span * aspect[ax]) / 2.0 - margin
            cap = min(max_shift, max(0.0, headroom))
            t[ax] = rng.uniform(-cap, cap)
        pts = _render(
            outline, canvas, span, (half + t[0], half + t[1]), mirrored=mirrored
        )
        items[item_id] = pts
        outlines[item_id] = outline
        plants_all[item_id] = Plant(
            source_id=item_id, scale=s, mirrored=mirrored, tx=float(t[0]), ty=float(t[1])
        )

    chosen = rng.choice(n_items, size=n_queries, replace=False)
    queries: dict[str, np.ndarray] = {}
    positives: dict[str, set[str]] = {}
    plants: dict[str, Plant] = {}
    for j, idx in enumerate(chosen):
        source_id = f"item{int(idx):05d}"
        query_id = f"query{j:03d}"
        pts = _render(
            outlines[source_id], canvas, canvas - 2 * margin, (half, half)
        )
        if jitter > 0:
            pts = pts.copy()
            pts[:, :2] += rng.normal(0.0, jitter, size=(pts.shape[0], 2))
        queries[query_id] = pts
        positives[query_id] = {source_id}
        plants[query_id] = plants_all[source_id]
    return SynthBenchmark(
        canvas=canvas,
        items=items,
        queries=queries,
        ground_truth=GroundTruth(positives=positives),
        plants=plants,
    )


def synth_classes(
    seed: int,
    n_classes: int = 20,
    members: int = 5,
    n_queries: int = 10,
    canvas: int = CANONICAL_SIDE,
    jitter: float = 1.0,
) -> tuple[SynthBenchmark, list[str], np.ndarray]:
    """Class-structured corpus with one-hot class auxiliary vectors.

    Members of a class share one base outline under mild plants; ground
    truth marks the whole class positive. Returns the benchmark plus
    (aux ids, one-hot aux matrix) for query-expansion experiments.
    """
    rng = np.random.default_rng(seed)
    half = canvas / 2.0
    items: dict[str, np.ndarray] = {}
    classes: dict[str, int] = {}
    outlines = [random_outline(rng) for _ in range(n_classes)]
    plants_all: dict[str, Plant] = {}
    for c in range(n_classes):
        for m in range(members):
            item_id = f"c{c:03d}m{m:02d}"
            s = float(rng.choice((1.0, 0.8, 0.6)))
            span = s * canvas
            mins = outlines[c][:, :2].min(axis=0)
            maxs = outlines[c][:, :2].max(axis=0)
            aspect = (maxs - mins) / (maxs - mins).max()
            t = np.empty(2)
            for ax in range(2):
                cap = min(80.0, max(0.0, half - span * aspect[ax] / 2.0 - 2.0))
                t[ax] = rng.uniform(-cap, cap)
            pts = _render(outlines[c], canvas, span, (half + t[0], half + t[1]))
            pts = pts.copy()
            pts[:, :2] += rng.normal(0.0, jitter, size=(pts.shape[0], 2))
            items[item_id] = pts
            classes[item_id] = c
            plants_all[item_id] = Plant(item_id, s, False, float(t[0]), float(t[1]))

    queries: dict[str, np.ndarray] = {}
    positives: dict[str, set[str]] = {}
    plants: dict[str, Plant] = {}
    chosen = rng.choice(n_classes, size=min(n_queries, n_classes), replace=False)
    for j, c in enumerate(chosen):
        query_id = f"query{j:03d}"
        pts = _render(outlines[int(c)], canvas, canvas - 4.0, (half, half))
        pts[:, :2] += rng.normal(0.0, jitter, size=(pts.shape[0], 2))
        queries[query_id] = pts
        positives[query_id] = {i for i, cc in classes.items() if cc == int(c)}
        plants[query_id] = Plant(f"class{int(c)}", 1.0, False, 0.0, 0.0)

    bench = SynthBenchmark(
        canvas=canvas,
        items=items,
        queries=queries,
        ground_truth=GroundTruth(positives=positives),
        plants=plants,
    )
    ids = list(items)
    aux = np.zeros((len(ids), n_classes))
    for row, item_id in enumerate(ids):
        aux[row, classes[item_id]] = 1.0
    return bench, ids, aux


def render_png(points_px: np.ndarray, canvas: int, path) -> None:
    """Tiny white-on-black dot rendering for thumbnails."""
    from PIL import Image

    img = np.zeros((canvas, canvas), dtype=np.uint8)
    xs = np.clip(np.round(points_px[:, 0]).astype(int), 0, canvas - 1)
    ys = np.clip(np.round(points_px[:, 1]).astype(int), 0, canvas - 1)
    img[ys, xs] = 255
    Image.fromarray(img).save(path)
