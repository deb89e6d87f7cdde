import math

import numpy as np
import pytest

from afm import align as A
from afm import maps as M
from afm import sketch as S


def rand_points(rng, n):
    pts = np.empty((n, 4))
    pts[:, 0] = rng.uniform(0.8, 2.4, n)
    pts[:, 1] = rng.uniform(0.8, 2.4, n)
    pts[:, 2] = rng.uniform(0, 2 * math.pi, n)
    pts[:, 3] = rng.uniform(0.4, 1.0, n)
    return pts


def shifted(pts, dx_norm, dy_norm=0.0):
    out = pts.copy()
    out[:, 0] -= dx_norm
    out[:, 1] -= dy_norm
    return out


def query_and_db(rng, fast_spectra, kern=1, n_p=15, n_q=18):
    p = rand_points(rng, n_p)
    q = rand_points(rng, n_q)
    qd = S.build_descriptor(p, fast_spectra, M.query(kern))
    raw_p = S.build_descriptor(p, fast_spectra, M.DATABASE)
    db = S.build_descriptor(q, fast_spectra, M.DATABASE)
    return p, q, qd, raw_p, db


class TestGrids:
    def test_scale_one(self):
        g = A.grid_for_scale(1.0)
        np.testing.assert_array_equal(g.offsets, np.arange(-80, 81, 20))
        assert g.max_shift == 80 and g.step == 20

    def test_scaled_grids(self):
        g8 = A.grid_for_scale(0.8)
        assert g8.max_shift == 100 and g8.step == 16
        assert g8.offsets[0] == -96 and g8.offsets[-1] == 96
        g6 = A.grid_for_scale(0.6)
        assert g6.max_shift == 133 and g6.step == 12
        assert g6.offsets[0] == -132 and 0 in g6.offsets

    def test_symmetric(self):
        for s in (1.0, 0.8, 0.6):
            g = A.grid_for_scale(s)
            np.testing.assert_array_equal(g.offsets, -g.offsets[::-1])


class TestPoly1D:
    def test_coefficient_count(self, fast_spectra):
        rng = np.random.default_rng(0)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        layout = fast_spectra.layout()
        poly = A.poly1d(qd.proj_x, db.proj_x, layout, 1.0)
        assert poly.n_coefficients == layout.dim_x == 9

    def test_zero_shift_is_plain_inner_product(self, fast_spectra):
        rng = np.random.default_rng(1)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        layout = fast_spectra.layout()
        poly = A.poly1d(qd.proj_x, db.proj_x, layout, 1.0)
        assert A.eval_poly1d(poly, 0.0) == pytest.approx(
            float(qd.proj_x @ db.proj_x), rel=1e-12
        )

    def test_shift_theorem_oracle(self, fast_spectra):
        # Oracle: rebuild the query descriptor from literally translated
        # points and take the inner product.
        rng = np.random.default_rng(2)
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        for trial in range(8):
            kern = int(rng.integers(0, 3))
            p, q, qd, _, db = query_and_db(rng, fast_spectra, kern)
            poly = A.poly1d(qd.proj_x, db.proj_x, layout, 1.0)
            ref_scale = None
            for d_norm in grid.offsets_norm:
                moved = S.build_descriptor(
                    shifted(p, d_norm), fast_spectra, M.query(kern)
                )
                want = float(moved.proj_x @ db.proj_x)
                got = A.eval_poly1d(poly, float(d_norm))
                scale = np.linalg.norm(qd.proj_x) * np.linalg.norm(db.proj_x)
                assert abs(got - want) <= 1e-6 * max(1.0, scale)

    def test_constant_polynomial(self, fast_spectra):
        layout = fast_spectra.layout()
        poly = A.TrigPoly1D(
            frequencies=layout.omega_x,
            betas=np.array([1.0, 0, 0, 0, 0]),
            gammas=np.zeros(4),
            norm_product=1.0,
        )
        grid = A.grid_for_scale(1.0)
        vals = {A.eval_poly1d(poly, d) for d in grid.offsets_norm}
        assert all(v == pytest.approx(1.0) for v in vals)
        score, shift = A.max_poly1d(poly, grid)
        assert shift == 0  # tie broken toward the smallest magnitude

    def test_planted_shift_recovered(self, fast_spectra):
        rng = np.random.default_rng(3)
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        for planted_px in (-60, -20, 0, 40, 80):
            q = rand_points(rng, 25)
            d_norm = planted_px * A.PX_TO_NORM
            p = q.copy()
            p[:, 0] += d_norm  # query content sits at db content + shift
            qv = S.build_descriptor(p, fast_spectra, M.query(1))
            db = S.build_descriptor(q, fast_spectra, M.DATABASE)
            n_q = float(
                np.linalg.norm(S.build_descriptor(p, fast_spectra, M.symmetric(1)).proj_x)
            )
            poly = A.poly1d(
                qv.proj_x, db.proj_x, layout,
                n_q * db.norms.get("proj_x", 1),
            )
            score, shift = A.max_poly1d(poly, grid)
            assert shift == planted_px
            assert score >= 0.99

    def test_layout_mismatch_rejected(self, fast_spectra):
        layout = fast_spectra.layout()
        with pytest.raises(A.LayoutMismatchError):
            A.poly1d(np.zeros(5), np.zeros(layout.dim_proj), layout, 1.0)


class TestPoly2D:
    def test_coefficient_count_formula(self, fast_spectra):
        rng = np.random.default_rng(4)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        layout = fast_spectra.layout()
        poly = A.poly2d(qd.full, db.full, layout, 1.0)
        assert poly.n_coefficients == 81
        for n in range(2, 9):
            lay = M.EmbeddingLayout(np.arange(n, dtype=float), np.array([0.0, 1.0]))
            dummy = A.TrigPoly2D(
                frequencies=lay.omega_x,
                cc=np.zeros((n, n)), sc=np.zeros((n, n)),
                cs=np.zeros((n, n)), ss=np.zeros((n, n)),
                norm_product=1.0,
            )
            assert dummy.n_coefficients == (2 * n - 1) ** 2

    def test_zero_shift_is_plain_inner_product(self, fast_spectra):
        rng = np.random.default_rng(5)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        poly = A.poly2d(qd.full, db.full, fast_spectra.layout(), 1.0)
        assert A.eval_poly2d(poly, 0.0, 0.0) == pytest.approx(
            float(qd.full @ db.full), rel=1e-12
        )

    def test_shift_theorem_oracle_full_grid(self, fast_spectra):
        rng = np.random.default_rng(6)
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        for trial in range(4):
            kern = int(rng.integers(0, 3))
            p, q, qd, _, db = query_and_db(rng, fast_spectra, kern)
            poly = A.poly2d(qd.full, db.full, layout, 1.0)
            scale = np.linalg.norm(qd.full) * np.linalg.norm(db.full)
            for dx in grid.offsets_norm[::2]:
                for dy in grid.offsets_norm[::2]:
                    moved = S.build_descriptor(
                        shifted(p, dx, dy), fast_spectra, M.query(kern)
                    )
                    want = float(moved.full @ db.full)
                    got = A.eval_poly2d(poly, float(dx), float(dy))
                    assert abs(got - want) <= 1e-6 * max(1.0, scale)

    def test_norm_invariance_under_shift(self, fast_spectra):
        rng = np.random.default_rng(7)
        p = rand_points(rng, 30)
        grid = A.grid_for_scale(1.0)
        base = S.build_descriptor(p, fast_spectra, M.symmetric(0))
        n0 = np.linalg.norm(base.full)
        for d in grid.offsets_norm:
            moved = S.build_descriptor(shifted(p, d, -d), fast_spectra, M.symmetric(0))
            assert np.linalg.norm(moved.full) == pytest.approx(n0, rel=1e-8)

    def test_planted_2d_shift_recovered(self, fast_spectra):
        rng = np.random.default_rng(8)
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        q = rand_points(rng, 25)
        planted = (40, -20)
        p = q.copy()
        p[:, 0] += planted[0] * A.PX_TO_NORM
        p[:, 1] += planted[1] * A.PX_TO_NORM
        qv = S.build_descriptor(p, fast_spectra, M.query(2))
        db = S.build_descriptor(q, fast_spectra, M.DATABASE)
        n_q = float(np.linalg.norm(S.build_descriptor(p, fast_spectra, M.symmetric(2)).full))
        poly = A.poly2d(qv.full, db.full, layout, n_q * db.norms.get("full", 2))
        score, shift = A.max_poly2d(poly, grid)
        assert shift == planted
        assert score >= 0.99

    def test_argmax_invariant_to_positive_scaling(self, fast_spectra):
        rng = np.random.default_rng(9)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        p1 = A.poly2d(qd.full, db.full, layout, 1.0)
        p2 = A.poly2d(7.5 * qd.full, db.full, layout, 7.5)
        s1, sh1 = A.max_poly2d(p1, grid)
        s2, sh2 = A.max_poly2d(p2, grid)
        assert sh1 == sh2
        assert s1 == pytest.approx(s2, rel=1e-12)


class TestRefineLocal:
    def test_n1_returns_center(self, fast_spectra):
        rng = np.random.default_rng(10)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        poly = A.poly2d(qd.full, db.full, fast_spectra.layout(), 2.0)
        grid = A.grid_for_scale(1.0)
        score, shift = A.refine_local(poly, grid, (40, -20), 1)
        assert shift == (40, -20)
        assert score == pytest.approx(
            A.eval_poly2d(poly, 40 * A.PX_TO_NORM, -20 * A.PX_TO_NORM) / 2.0
        )

    def test_full_coverage_equals_exhaustive(self, fast_spectra):
        rng = np.random.default_rng(11)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        poly = A.poly2d(qd.full, db.full, fast_spectra.layout(), 1.0)
        grid = A.grid_for_scale(1.0)
        want = A.max_poly2d(poly, grid)
        got = A.refine_local(poly, grid, (0, 0), 2 * grid.size - 1)
        assert got[1] == want[1]
        assert got[0] == pytest.approx(want[0], rel=1e-12)

    def test_even_n_rejected(self, fast_spectra):
        rng = np.random.default_rng(12)
        _, _, qd, _, db = query_and_db(rng, fast_spectra)
        poly = A.poly2d(qd.full, db.full, fast_spectra.layout(), 1.0)
        with pytest.raises(ValueError):
            A.refine_local(poly, A.grid_for_scale(1.0), (0, 0), 4)


class TestBinary:
    def test_all_positive_coefficients_agree_at_origin(self, fast_spectra):
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        basis = A.binary_basis(grid, layout)
        n = layout.n_x
        poly = A.TrigPoly2D(
            frequencies=layout.omega_x,
            cc=np.ones((n, n)), sc=np.ones((n, n)),
            cs=np.ones((n, n)), ss=np.ones((n, n)),
            norm_product=1.0,
        )
        bp = A.binarize(poly, basis)
        agree = A.binary_agreements(bp)
        origin = int(np.flatnonzero((basis.translations == 0).all(axis=1))[0])
        assert agree[origin] == poly.n_coefficients == 81
        surrogate, shift = A.max_binary(bp)
        assert surrogate == 81
        assert shift == (0, 0)

    def test_bit_count_per_translation(self, fast_spectra):
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        basis = A.binary_basis(grid, layout)
        assert basis.n_slots == 81
        assert basis.bits.shape == (grid.size**2, math.ceil(81 / 8))

    def test_binary_argmax_matches_real_on_planted_pair(self, fast_spectra):
        rng = np.random.default_rng(13)
        layout = fast_spectra.layout()
        grid = A.grid_for_scale(1.0)
        basis = A.binary_basis(grid, layout)
        hits = 0
        trials = 30
        for _ in range(trials):
            q = rand_points(rng, 30)
            p = q.copy()
            p[:, 0] += float(rng.choice(grid.offsets)) * A.PX_TO_NORM
            p[:, 1] += float(rng.choice(grid.offsets)) * A.PX_TO_NORM
            qv = S.build_descriptor(p, fast_spectra, M.query(1))
            db = S.build_descriptor(q, fast_spectra, M.DATABASE)
            poly = A.poly2d(qv.full, db.full, layout, 1.0)
            _, real_shift = A.max_poly2d(poly, grid)
            _, bin_shift = A.max_binary(A.binarize(poly, basis))
            if (
                abs(bin_shift[0] - real_shift[0]) <= grid.step
                and abs(bin_shift[1] - real_shift[1]) <= grid.step
            ):
                hits += 1
        assert hits / trials >= 0.9


class TestNormProduct:
    def test_self_pair_normalizes_to_one(self, fast_spectra):
        rng = np.random.default_rng(14)
        pts = rand_points(rng, 20)
        kern = 1
        qv = S.build_descriptor(pts, fast_spectra, M.query(kern))
        db = S.build_descriptor(pts, fast_spectra, M.DATABASE)
        n_q = float(
            np.linalg.norm(S.build_descriptor(pts, fast_spectra, M.symmetric(kern)).full)
        )
        np_ = A.norm_product(n_q, db.norms, kern, "full")
        poly = A.poly2d(qv.full, db.full, fast_spectra.layout(), np_)
        assert A.eval_poly2d(poly, 0.0, 0.0) / np_ == pytest.approx(1.0, abs=1e-10)
