import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afm import kernels as K
from afm import maps as M


def _rand_spectrum(rng, n_freq, n_kernels=1):
    freqs = np.concatenate([[0.0], np.sort(rng.uniform(0.3, 9.0, n_freq - 1))])
    return K.Spectrum(
        frequencies=freqs, weights=rng.uniform(0.01, 1.0, (n_kernels, n_freq))
    )


class TestMapMode:
    def test_database_rejects_kernel_index(self):
        with pytest.raises(ValueError):
            M.MapMode(M.Weighting.DATABASE, 1)

    def test_weighted_modes_need_kernel_index(self):
        with pytest.raises(ValueError):
            M.MapMode(M.Weighting.QUERY)


class TestEmbed1D:
    def test_database_dc_component_is_one(self, fast_spectra):
        vec = M.embed_1d(0.73, fast_spectra.spatial, M.DATABASE)
        assert vec[0] == 1.0

    def test_symmetric_inner_product_is_khat(self, fast_spectra):
        spec = fast_spectra.spatial
        rng = np.random.default_rng(0)
        for _ in range(200):
            p, q = rng.uniform(0, np.pi, 2)
            got = M.embed_1d(p, spec, M.symmetric(1)) @ M.embed_1d(
                q, spec, M.symmetric(1)
            )
            want = K.eval_khat(spec, 1, p - q)
            assert got == pytest.approx(want, abs=1e-12)

    def test_asymmetric_preserves_inner_products(self, fast_spectra):
        spec = fast_spectra.spatial
        rng = np.random.default_rng(1)
        for kern in range(spec.n_kernels):
            for _ in range(300):
                p, q = rng.uniform(0, np.pi, 2)
                asym = M.embed_1d(q, spec, M.query(kern)) @ M.embed_1d(
                    p, spec, M.DATABASE
                )
                sym = M.embed_1d(q, spec, M.symmetric(kern)) @ M.embed_1d(
                    p, spec, M.symmetric(kern)
                )
                assert abs(asym - sym) <= 1e-12 * max(1.0, abs(sym))

    def test_axis_dimension(self, fast_spectra):
        vec = M.embed_1d(0.2, fast_spectra.spatial, M.DATABASE)
        assert vec.shape == (2 * fast_spectra.spatial.n_freq - 1,)


class TestLayout:
    @pytest.mark.parametrize(
        "nx,nphi,full,proj",
        [(5, 2, 243, 27), (6, 3, 605, 55), (8, 3, 1125, 75)],
    )
    def test_paper_dimensions(self, nx, nphi, full, proj):
        layout = M.EmbeddingLayout(
            omega_x=np.arange(nx, dtype=float), omega_phi=np.arange(nphi, dtype=float)
        )
        assert layout.dim_full == full
        assert layout.dim_proj == proj

    @given(nx=st.integers(2, 8), nphi=st.integers(2, 5))
    @settings(max_examples=28, deadline=None)
    def test_dimension_formulas(self, nx, nphi):
        layout = M.EmbeddingLayout(
            omega_x=np.arange(nx, dtype=float), omega_phi=np.arange(nphi, dtype=float)
        )
        assert layout.dim_x == 2 * nx - 1
        assert layout.dim_phi == 2 * nphi - 1
        assert layout.dim_full == layout.dim_x**2 * layout.dim_phi
        assert layout.dim_proj == layout.dim_x * layout.dim_phi
        assert len(layout.index_table()) == layout.dim_full

    def test_no_sine_slot_at_zero(self):
        slots = M.axis_slots(np.array([0.0, 1.0, 2.5]))
        assert slots == [(0.0, "cos"), (1.0, "cos"), (1.0, "sin"), (2.5, "cos"), (2.5, "sin")]


class TestFullEmbedding:
    def test_dc_component_database_mode(self, fast_spectra):
        vec = M.embed_point_full((0.5, 1.2, 2.0, 1.0), fast_spectra, M.DATABASE)
        assert vec[0] == 1.0
        assert vec.shape == (fast_spectra.layout().dim_full,)

    def test_separable_kernel_product(self, fast_spectra):
        rng = np.random.default_rng(2)
        for kern in range(3):
            mode = M.symmetric(kern)
            for _ in range(50):
                p = rng.uniform(0, np.pi, 3)
                q = rng.uniform(0, np.pi, 3)
                got = M.embed_point_full(p, fast_spectra, mode) @ M.embed_point_full(
                    q, fast_spectra, mode
                )
                want = (
                    K.eval_khat(fast_spectra.spatial, kern, p[0] - q[0])
                    * K.eval_khat(fast_spectra.spatial, kern, p[1] - q[1])
                    * K.eval_khat(fast_spectra.orientation, 0, p[2] - q[2])
                )
                assert got == pytest.approx(want, abs=1e-10)

    def test_asymmetric_full_preserved(self, fast_spectra):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = rng.uniform(0, np.pi, 3)
            q = rng.uniform(0, np.pi, 3)
            asym = M.embed_point_full(q, fast_spectra, M.query(0)) @ M.embed_point_full(
                p, fast_spectra, M.DATABASE
            )
            sym = M.embed_point_full(q, fast_spectra, M.symmetric(0)) @ M.embed_point_full(
                p, fast_spectra, M.symmetric(0)
            )
            assert abs(asym - sym) <= 1e-12 * max(1.0, abs(sym))


class TestProjectionEmbedding:
    def test_projection_dimension(self, fast_spectra):
        vec = M.embed_point_projection((0.5, 1.2, 2.0), "x", fast_spectra, M.DATABASE)
        assert vec.shape == (fast_spectra.layout().dim_proj,)

    def test_database_subvector_bitwise_equal(self, fast_spectra):
        rng = np.random.default_rng(4)
        layout = fast_spectra.layout()
        for _ in range(25):
            pt = rng.uniform(0, np.pi, 3)
            full = M.embed_point_full(pt, fast_spectra, M.DATABASE)
            for axis in ("x", "y"):
                sub = full[M.projection_indices(layout, axis)]
                direct = M.embed_point_projection(pt, axis, fast_spectra, M.DATABASE)
                np.testing.assert_array_equal(sub, direct)

    def test_query_subvector_differs_by_dc_weight(self, fast_spectra):
        # In query mode the full-embedding sub-vector carries the other
        # axis's alpha at frequency zero; the direct projection does not.
        layout = fast_spectra.layout()
        kern = 1
        alpha0 = fast_spectra.spatial.weights[kern, 0]
        pt = (0.9, 2.0, 4.1)
        full = M.embed_point_full(pt, fast_spectra, M.query(kern))
        sub = full[M.projection_indices(layout, "x")]
        direct = M.embed_point_projection(pt, "x", fast_spectra, M.query(kern))
        np.testing.assert_allclose(sub, alpha0 * direct, rtol=1e-12)


class TestWeightVectors:
    def test_full_weight_matches_componentwise_modes(self, fast_spectra):
        # weight_full(sym) squared equals weight_full(query) per component.
        for kern in range(3):
            ws = fast_spectra.weight_full(kern, sym=True)
            wq = fast_spectra.weight_full(kern, sym=False)
            np.testing.assert_allclose(ws * ws, wq, rtol=1e-12)

    def test_weighting_reproduces_modes(self, fast_spectra):
        rng = np.random.default_rng(5)
        pt = rng.uniform(0, np.pi, 3)
        raw = M.embed_point_full(pt, fast_spectra, M.DATABASE)
        for kern in range(3):
            sym_vec = M.embed_point_full(pt, fast_spectra, M.symmetric(kern))
            np.testing.assert_allclose(
                fast_spectra.weight_full(kern) * raw, sym_vec, atol=1e-14
            )
            query_vec = M.embed_point_full(pt, fast_spectra, M.query(kern))
            np.testing.assert_allclose(
                fast_spectra.weight_full(kern, sym=False) * raw, query_vec, atol=1e-14
            )
