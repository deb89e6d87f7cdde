"""1D stationary kernel signatures and their finite-frequency approximations.

A kernel signature k(lambda) is approximated by a nonnegative cosine sum
khat(lambda) = sum_w alpha_w * cos(w * lambda) over a finite frequency set.
Two constructions are provided: a harmonic (periodization) baseline and a
joint linear-program fit that shares one frequency set across several
kernels while minimizing the summed sup-norm error on a lag grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

LAMBDA_MAX = math.pi
GRID_SIZE = 501
POOL_STEP = 0.25
POOL_MAX = 25.0
PRUNE_EPS = 1e-7

GAMMA_LO = 1e-6
GAMMA_HI = 1e3
BISECT_ITERS = 40


class InvalidParameterError(ValueError):
    pass


class SolverFailureError(RuntimeError):
    """The LP solver did not return an optimum.

    The sparse-approximation LP is always feasible (alpha = 0), so this
    signals a bug or a solver breakdown rather than a bad input.
    """


class DimensionTargetError(RuntimeError):
    """Bisection could not reach the requested frequency count.

    Carries the best spectrum found so callers can decide whether the
    nearest achievable dimensionality is acceptable.
    """

    def __init__(self, target: int, best: "Spectrum"):
        super().__init__(
            f"could not reach |Omega|={target}; nearest achieved is "
            f"{best.n_freq}"
        )
        self.target = target
        self.best = best


@dataclass(frozen=True)
class KernelSignature:
    """A 1D stationary kernel profile k(lambda), normalized to k(0) = 1."""

    sigma: float
    periodic: bool = False
    period: float | None = None
    lambda_max: float = LAMBDA_MAX

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if self.periodic:
            if self.period is None or self.period <= 0:
                raise InvalidParameterError(
                    f"periodic signature needs a positive period, got {self.period}"
                )

    def __call__(self, lam) -> np.ndarray | float:
        lam = np.asarray(lam, dtype=float)
        if not self.periodic:
            out = np.exp(-(lam ** 2) / (2.0 * self.sigma ** 2))
        else:
            # Wrapped Gaussian: sum of shifted bells, renormalized so k(0)=1.
            # Terms decay fast; +-8 periods is far below float precision.
            per = self.period
            acc = np.zeros_like(lam)
            ref = 0.0
            for m in range(-8, 9):
                acc += np.exp(-((lam + m * per) ** 2) / (2.0 * self.sigma ** 2))
                ref += np.exp(-((m * per) ** 2) / (2.0 * self.sigma ** 2))
            out = acc / ref
        if out.ndim == 0:
            return float(out)
        return out


def make_rbf_signature(
    sigma: float,
    periodic: bool = False,
    period: float | None = None,
    lambda_max: float = LAMBDA_MAX,
) -> KernelSignature:
    return KernelSignature(sigma=sigma, periodic=periodic, period=period,
                           lambda_max=lambda_max)


def default_grid(lambda_max: float = LAMBDA_MAX, size: int = GRID_SIZE) -> np.ndarray:
    return np.linspace(0.0, lambda_max, size)


@dataclass(frozen=True)
class FrequencyPool:
    """Candidate frequencies (0 always present) plus the lag sample grid."""

    frequencies: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        grid = np.asarray(self.grid, dtype=float)
        if freqs[0] != 0.0 or np.any(np.diff(freqs) <= 0):
            raise InvalidParameterError(
                "pool frequencies must start at 0 and be strictly increasing"
            )
        if grid[0] != 0.0:
            raise InvalidParameterError("lag grid must start at 0")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "grid", grid)


def default_pool(lambda_max: float = LAMBDA_MAX) -> FrequencyPool:
    n = int(round(POOL_MAX / POOL_STEP)) + 1
    return FrequencyPool(
        frequencies=np.arange(n) * POOL_STEP,
        grid=default_grid(lambda_max),
    )


@dataclass(frozen=True)
class Spectrum:
    """A shared frequency set with per-kernel nonnegative cosine weights.

    ``weights`` has one row per kernel. ``linf_errors`` holds the achieved
    sup-norm error per kernel on the fitting grid; ``gamma`` the sparsity
    weight used (0 for constructions that do not regularize).
    """

    frequencies: np.ndarray
    weights: np.ndarray
    lambda_max: float = LAMBDA_MAX
    linf_errors: np.ndarray | None = None
    gamma: float = 0.0
    clamped: int = 0  # negative harmonic coefficients clamped to zero

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if w.shape[1] != freqs.shape[0]:
            raise InvalidParameterError(
                f"weights have {w.shape[1]} columns for {freqs.shape[0]} frequencies"
            )
        if np.any(w < 0):
            raise InvalidParameterError("spectrum weights must be nonnegative")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "weights", w)
        if self.linf_errors is not None:
            object.__setattr__(
                self, "linf_errors", np.asarray(self.linf_errors, dtype=float)
            )

    @property
    def n_kernels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_freq(self) -> int:
        return self.frequencies.shape[0]

    def row(self, kernel_index: int) -> np.ndarray:
        return self.weights[kernel_index]


def eval_khat(spec: Spectrum, kernel_index: int, lam) -> np.ndarray | float:
    """Evaluate the cosine-sum approximant of one kernel at lag(s) lam."""
    lam = np.asarray(lam, dtype=float)
    alpha = spec.weights[kernel_index]
    vals = np.cos(np.multiply.outer(lam, spec.frequencies)) @ alpha
    if vals.ndim == 0:
        return float(vals)
    return vals


def linf_error(
    sig: KernelSignature,
    spec: Spectrum,
    kernel_index: int,
    grid: np.ndarray | None = None,
) -> float:
    """Max absolute deviation between k and khat over the lag grid."""
    if grid is None:
        grid = default_grid(spec.lambda_max)
    return float(np.max(np.abs(sig(grid) - eval_khat(spec, kernel_index, grid))))


def harmonic_spectrum(
    sig: KernelSignature, lambda_max: float = LAMBDA_MAX, n_freq: int = 7
) -> Spectrum:
    """Fourier-periodization baseline on harmonic frequencies n*pi/lambda_max.

    The signature is made periodic with period 2*lambda_max and its first
    ``n_freq`` cosine coefficients are taken by trapezoid quadrature on the
    default grid. The periodization need not be positive definite, so
    negative coefficients are clamped to zero (count reported in
    ``clamped``).
    """
    if n_freq < 1:
        raise InvalidParameterError(f"n_freq must be >= 1, got {n_freq}")
    grid = default_grid(lambda_max)
    kvals = np.asarray(sig(grid), dtype=float)
    freqs = np.arange(n_freq) * (math.pi / lambda_max)
    coeffs = np.empty(n_freq)
    for j, w in enumerate(freqs):
        integrand = kvals * np.cos(w * grid)
        val = np.trapezoid(integrand, grid)
        coeffs[j] = val / lambda_max if j == 0 else 2.0 * val / lambda_max
    clamped = int(np.sum(coeffs < 0))
    coeffs = np.maximum(coeffs, 0.0)
    spec = Spectrum(
        frequencies=freqs,
        weights=coeffs[None, :],
        lambda_max=lambda_max,
        gamma=0.0,
        clamped=clamped,
    )
    err = linf_error(sig, spec, 0, grid)
    return replace(spec, linf_errors=np.array([err]))


def _solve_joint_lp(
    kvals: np.ndarray, cos_table: np.ndarray, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the joint sparse-approximation LP.

    Variables are per-kernel weights alpha (nonnegative), one sup-norm
    slack per kernel, and one envelope variable per pool frequency bounding
    max_i alpha. Objective: sum of slacks + gamma * sum of envelopes.

    kvals: (n_kernels, n_grid) signature values on the grid.
    cos_table: (n_grid, n_pool) cos(w * lambda).
    Returns (alpha matrix (n_kernels, n_pool), slack vector).
    """
    n_k, n_g = kvals.shape
    n_f = cos_table.shape[1]
    n_alpha = n_k * n_f
    n_var = n_alpha + n_k + n_f  # alpha, slack, envelope

    c = np.zeros(n_var)
    c[n_alpha : n_alpha + n_k] = 1.0
    c[n_alpha + n_k :] = gamma

    blocks = []
    b_parts = []
    ones = np.ones((n_g, 1))
    for i in range(n_k):
        # khat - s_i <= k  and  -khat - s_i <= -k
        for sign in (1.0, -1.0):
            row_block = sparse.hstack(
                [
                    sparse.csr_matrix((n_g, i * n_f)),
                    sparse.csr_matrix(sign * cos_table),
                    sparse.csr_matrix((n_g, (n_k - 1 - i) * n_f)),
                    sparse.csr_matrix(
                        (-ones.ravel(), (np.arange(n_g), np.full(n_g, i))),
                        shape=(n_g, n_k),
                    ),
                    sparse.csr_matrix((n_g, n_f)),
                ]
            )
            blocks.append(row_block)
            b_parts.append(sign * kvals[i])
    # alpha_iw - t_w <= 0
    envelope = sparse.hstack(
        [
            sparse.eye(n_alpha),
            sparse.csr_matrix((n_alpha, n_k)),
            -sparse.vstack([sparse.eye(n_f)] * n_k),
        ]
    )
    blocks.append(envelope)
    b_parts.append(np.zeros(n_alpha))
    a_ub = sparse.vstack(blocks, format="csr")
    b_ub = np.concatenate(b_parts)

    # Interior point with crossover: ~3x faster than dual simplex here and
    # still lands on a vertex, so the support stays crisp.
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs-ipm")
    if not res.success:
        raise SolverFailureError(f"LP solver failed: {res.message}")
    x = res.x
    # IPM feasibility noise can leave weights a hair below zero.
    alpha = np.maximum(x[:n_alpha].reshape(n_k, n_f), 0.0)
    slack = x[n_alpha : n_alpha + n_k]
    return alpha, slack


def _prune(pool_freqs: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop pool frequencies whose weight column is numerical dust.

    Frequency 0 is always retained: the DC slot anchors the feature-map
    layout even when its weight vanishes.
    """
    keep = np.max(alpha, axis=0) > PRUNE_EPS
    keep[0] = True
    return pool_freqs[keep], alpha[:, keep]


_lp_cache: dict[tuple, "Spectrum"] = {}


def joint_lp_spectrum(
    sigs: list[KernelSignature], pool: FrequencyPool, gamma: float
) -> Spectrum:
    """Jointly fit several signatures on one shared frequency set.

    Minimizes the summed per-kernel sup-norm error on the pool grid plus
    gamma times the sum over frequencies of the largest per-kernel weight,
    which drives entire frequency columns to zero as gamma grows.
    """
    if not sigs:
        raise InvalidParameterError("need at least one signature")
    lmaxes = {s.lambda_max for s in sigs}
    if len(lmaxes) != 1:
        raise InvalidParameterError("all signatures must share lambda_max")
    lambda_max = lmaxes.pop()
    key = (
        tuple(sigs),
        pool.frequencies.tobytes(),
        pool.grid.tobytes(),
        float(gamma),
    )
    cached = _lp_cache.get(key)
    if cached is not None:
        return cached
    grid = pool.grid
    kvals = np.stack([np.asarray(s(grid), dtype=float) for s in sigs])
    cos_table = np.cos(np.outer(grid, pool.frequencies))
    alpha, _ = _solve_joint_lp(kvals, cos_table, gamma)
    freqs, weights = _prune(pool.frequencies, alpha)
    spec = Spectrum(
        frequencies=freqs, weights=weights, lambda_max=lambda_max, gamma=gamma
    )
    errs = np.array([linf_error(s, spec, i, grid) for i, s in enumerate(sigs)])
    spec = replace(spec, linf_errors=errs)
    _lp_cache[key] = spec
    return spec


def _top_support(spec: Spectrum, size: int) -> tuple[float, ...]:
    """The ``size`` strongest frequencies by envelope weight, 0 kept."""
    envelope = np.max(spec.weights, axis=0)
    order = np.argsort(-envelope, kind="stable")
    chosen = set(spec.frequencies[order[:size]])
    if 0.0 not in chosen:
        chosen = set(spec.frequencies[order[: size - 1]]) | {0.0}
    return tuple(sorted(chosen))


def _refit_on_support(
    sigs: list[KernelSignature], pool: FrequencyPool, support: tuple[float, ...]
) -> Spectrum:
    sub = FrequencyPool(frequencies=np.asarray(support), grid=pool.grid)
    return joint_lp_spectrum(sigs, sub, gamma=0.0)


def spectrum_for_dim(
    sigs: list[KernelSignature],
    pool: FrequencyPool,
    target_nfreq: int,
    gamma_lo: float = GAMMA_LO,
    gamma_hi: float = GAMMA_HI,
    iters: int = BISECT_ITERS,
) -> Spectrum:
    """Select exactly ``target_nfreq`` shared frequencies via gamma search.

    A log-scale bisection on the sparsity weight locates the support-size
    transition. The support collapses discontinuously for small targets, so
    each bracketing solution with at least ``target_nfreq`` active
    frequencies contributes a candidate support (its strongest frequencies
    by envelope weight); every candidate is refit without regularization,
    which removes the L1 shrinkage bias from the kept weights. The
    candidate with the smallest summed error wins.
    """
    if target_nfreq < 1:
        raise InvalidParameterError(f"target_nfreq must be >= 1, got {target_nfreq}")
    if target_nfreq > pool.frequencies.shape[0]:
        raise InvalidParameterError(
            f"target_nfreq={target_nfreq} exceeds pool size {pool.frequencies.shape[0]}"
        )

    supports: dict[tuple[float, ...], float] = {}

    def consider(spec: Spectrum, gamma: float):
        if spec.n_freq >= target_nfreq:
            supports.setdefault(_top_support(spec, target_nfreq), gamma)

    lo, hi = math.log(gamma_lo), math.log(gamma_hi)
    spec_lo = joint_lp_spectrum(sigs, pool, gamma_lo)
    consider(spec_lo, gamma_lo)
    consider(joint_lp_spectrum(sigs, pool, gamma_hi), gamma_hi)
    for _ in range(iters):
        if hi - lo < 1e-3:  # support candidates no longer change
            break
        mid = 0.5 * (lo + hi)
        spec = joint_lp_spectrum(sigs, pool, math.exp(mid))
        consider(spec, math.exp(mid))
        if spec.n_freq > target_nfreq:
            lo = mid
        else:
            hi = mid

    best: Spectrum | None = None
    for support, gamma in supports.items():
        refit = _refit_on_support(sigs, pool, support)
        if refit.n_freq != target_nfreq:
            continue
        refit = replace(refit, gamma=gamma)
        if best is None or float(np.sum(refit.linf_errors)) < float(
            np.sum(best.linf_errors)
        ):
            best = refit
    if best is not None:
        return best
    near = _refit_on_support(
        sigs, pool, _top_support(spec_lo, min(target_nfreq, spec_lo.n_freq))
    )
    raise DimensionTargetError(target_nfreq, near)


# ---------------------------------------------------------------------------
# Flat text serialization


def dump_spectrum(spec: Spectrum) -> str:
    lines = [
        f"AFM-SPECTRUM v1 nkernels={spec.n_kernels} nfreq={spec.n_freq} "
        f"lambda_max={format(spec.lambda_max, '.17g')}"
    ]
    for j in range(spec.n_freq):
        cols = [format(spec.frequencies[j], ".17g")]
        cols += [format(spec.weights[i, j], ".17g") for i in range(spec.n_kernels)]
        lines.append(" ".join(cols))
    return "\n".join(lines) + "\n"


class SpectrumFormatError(ValueError):
    pass


def _parse_spectrum_block(lines: list[str], start: int) -> tuple[Spectrum, int]:
    header = lines[start].split()
    if header[:2] != ["AFM-SPECTRUM", "v1"]:
        raise SpectrumFormatError(f"bad spectrum header: {lines[start]!r}")
    fields = dict(part.split("=", 1) for part in header[2:])
    n_k = int(fields["nkernels"])
    n_f = int(fields["nfreq"])
    lambda_max = float(fields["lambda_max"])
    freqs = np.empty(n_f)
    weights = np.empty((n_k, n_f))
    for j in range(n_f):
        cols = lines[start + 1 + j].split()
        if len(cols) != n_k + 1:
            raise SpectrumFormatError(
                f"line {start + 2 + j}: expected {n_k + 1} columns, got {len(cols)}"
            )
        freqs[j] = float(cols[0])
        weights[:, j] = [float(v) for v in cols[1:]]
    spec = Spectrum(frequencies=freqs, weights=weights, lambda_max=lambda_max)
    return spec, start + 1 + n_f


def parse_spectra(text: str) -> list[Spectrum]:
    """Parse one or more concatenated spectrum blocks."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    specs = []
    pos = 0
    while pos < len(lines):
        spec, pos = _parse_spectrum_block(lines, pos)
        specs.append(spec)
    if not specs:
        raise SpectrumFormatError("no spectrum blocks found")
    return specs


def load_spectra(path) -> list[Spectrum]:
    with open(path, "r", encoding="ascii") as fh:
        return parse_spectra(fh.read())


def save_spectra(path, specs: list[Spectrum]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for spec in specs:
            fh.write(dump_spectrum(spec))
