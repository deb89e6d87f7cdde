import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afm import kernels as K


@pytest.fixture(scope="module")
def pool():
    return K.default_pool()


@pytest.fixture(scope="module")
def paper_sigs():
    return [K.make_rbf_signature(s) for s in (0.12, 0.16, 0.20)]


@pytest.fixture(scope="module")
def joint7(paper_sigs, pool):
    return K.spectrum_for_dim(paper_sigs, pool, 7)


class TestSignature:
    def test_self_similarity_normalized(self):
        for sigma in (0.05, 0.12, 0.2, 1.0):
            sig = K.make_rbf_signature(sigma)
            assert sig(0.0) == 1.0

    def test_closed_form_value(self):
        sig = K.make_rbf_signature(0.2)
        assert sig(0.2) == pytest.approx(math.exp(-0.5), abs=1e-12)

    def test_even(self):
        sig = K.make_rbf_signature(0.12)
        lam = np.linspace(-3, 3, 41)
        np.testing.assert_allclose(sig(lam), sig(-lam))

    def test_periodic_wraps(self):
        sig = K.make_rbf_signature(0.8, periodic=True, period=2 * math.pi)
        assert sig(0.0) == pytest.approx(1.0, abs=1e-15)
        lam = np.linspace(0, 2 * math.pi, 17)
        np.testing.assert_allclose(sig(lam), sig(lam + 2 * math.pi), atol=1e-12)

    def test_range(self):
        sig = K.make_rbf_signature(0.16)
        vals = np.asarray(sig(np.linspace(0, math.pi, 101)))
        assert np.all(vals >= 0) and np.all(vals <= 1)

    def test_invalid_parameters(self):
        with pytest.raises(K.InvalidParameterError):
            K.make_rbf_signature(0.0)
        with pytest.raises(K.InvalidParameterError):
            K.make_rbf_signature(-1.0)
        with pytest.raises(K.InvalidParameterError):
            K.make_rbf_signature(0.5, periodic=True, period=0.0)
        with pytest.raises(K.InvalidParameterError):
            K.make_rbf_signature(0.5, periodic=True)


class TestHarmonic:
    def test_paper_frequency_layout(self):
        sig = K.make_rbf_signature(0.12)
        spec = K.harmonic_spectrum(sig, n_freq=7)
        np.testing.assert_allclose(spec.frequencies, np.arange(7), atol=1e-12)

    def test_constant_kernel_is_dc_only(self):
        # A very wide RBF is ~constant 1 on [0, pi]: all mass lands on w=0.
        sig = K.make_rbf_signature(1e6)
        spec = K.harmonic_spectrum(sig, n_freq=5)
        assert spec.weights[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert np.all(np.abs(spec.weights[0, 1:]) < 1e-9)
        assert abs(K.eval_khat(spec, 0, 1.234) - 1.0) < 1e-8

    def test_worse_than_joint_at_same_size(self, pool):
        sig = K.make_rbf_signature(0.16)
        harm = K.harmonic_spectrum(sig, n_freq=7)
        joint = K.spectrum_for_dim([sig], pool, 7)
        assert joint.linf_errors[0] < harm.linf_errors[0]


class TestJointLP:
    def test_paper_setting_beats_harmonic_everywhere(self, paper_sigs, joint7):
        assert joint7.n_freq == 7
        for i, sig in enumerate(paper_sigs):
            harm = K.harmonic_spectrum(sig, n_freq=7)
            assert joint7.linf_errors[i] <= harm.linf_errors[0]

    def test_weights_nonnegative(self, joint7):
        assert np.all(joint7.weights >= 0)

    def test_huge_gamma_collapses_to_dc(self, paper_sigs, pool):
        spec = K.joint_lp_spectrum(paper_sigs, pool, 1e3)
        np.testing.assert_array_equal(spec.frequencies, [0.0])

    def test_single_kernel_beats_harmonic(self, pool):
        sig = K.make_rbf_signature(0.16)
        joint = K.spectrum_for_dim([sig], pool, 7)
        harm = K.harmonic_spectrum(sig, n_freq=7)
        assert joint.linf_errors[0] <= harm.linf_errors[0] + 1e-9

    def test_objective_monotone_in_gamma(self, paper_sigs, pool):
        # The LP optimum is non-decreasing in gamma (pointwise larger
        # objective over an identical feasible set). Pruning perturbs the
        # recomputed envelope by at most the dust threshold per frequency.
        def objective(spec, gamma):
            env = np.max(spec.weights, axis=0)
            return float(np.sum(spec.linf_errors)) + gamma * float(np.sum(env))

        gammas = [1e-4, 1e-2, 0.3, 1.0, 2.0, 5.0]
        vals = [objective(K.joint_lp_spectrum(paper_sigs, pool, g), g) for g in gammas]
        slack = K.PRUNE_EPS * pool.frequencies.size + 1e-6
        for lo, hi in zip(vals, vals[1:]):
            assert hi >= lo - slack

    def test_mismatched_lambda_max_rejected(self, pool):
        a = K.make_rbf_signature(0.1, lambda_max=math.pi)
        b = K.make_rbf_signature(0.1, lambda_max=2.0)
        with pytest.raises(K.InvalidParameterError):
            K.joint_lp_spectrum([a, b], pool, 0.1)


class TestSpectrumForDim:
    def test_paper_spatial_target(self, paper_sigs, pool):
        spec = K.spectrum_for_dim(paper_sigs, pool, 5)
        assert spec.n_freq == 5
        assert spec.frequencies[0] == 0.0

    def test_orientation_target(self, pool):
        sig = K.make_rbf_signature(0.8, periodic=True, period=2 * math.pi)
        spec = K.spectrum_for_dim([sig], pool, 2)
        assert spec.n_freq == 2

    def test_target_one_is_dc(self, paper_sigs, pool):
        spec = K.spectrum_for_dim(paper_sigs, pool, 1)
        np.testing.assert_array_equal(spec.frequencies, [0.0])

    @pytest.mark.slow
    def test_all_targets_hit(self, paper_sigs, pool):
        for target in range(1, 11):
            spec = K.spectrum_for_dim(paper_sigs, pool, target)
            assert spec.n_freq == target

    def test_unreachable_target_raises(self, paper_sigs):
        tiny = K.FrequencyPool(
            frequencies=np.array([0.0, 1.0]), grid=K.default_grid()
        )
        with pytest.raises(K.InvalidParameterError):
            K.spectrum_for_dim(paper_sigs, tiny, 5)


class TestEvalKhat:
    def test_lag_zero_is_weight_sum(self, joint7):
        for i in range(joint7.n_kernels):
            assert K.eval_khat(joint7, i, 0.0) == pytest.approx(
                float(np.sum(joint7.weights[i])), abs=1e-12
            )

    def test_within_reported_error_on_grid(self, paper_sigs, joint7, pool):
        for i, sig in enumerate(paper_sigs):
            approx = K.eval_khat(joint7, i, pool.grid)
            gap = np.max(np.abs(np.asarray(sig(pool.grid)) - approx))
            assert gap <= joint7.linf_errors[i] + 1e-12

    @given(lam=st.floats(-10, 10, allow_nan=False))
    @settings(max_examples=80, deadline=None)
    def test_even_in_lag(self, lam):
        spec = K.Spectrum(
            frequencies=np.array([0.0, 1.5, 4.0]),
            weights=np.array([[0.3, 0.5, 0.2]]),
        )
        assert K.eval_khat(spec, 0, lam) == K.eval_khat(spec, 0, -lam)


class TestLinfError:
    def test_zero_spectrum_error_is_one(self):
        sig = K.make_rbf_signature(0.12)
        spec = K.Spectrum(frequencies=np.array([0.0]), weights=np.array([[0.0]]))
        assert K.linf_error(sig, spec, 0) == pytest.approx(1.0)

    def test_ample_frequencies_fit_tightly(self, pool):
        sig = K.make_rbf_signature(0.16)
        spec = K.joint_lp_spectrum([sig], pool, 1e-6)
        assert K.linf_error(sig, spec, 0, pool.grid) < 0.01


class TestSerialization:
    def test_round_trip_values(self, joint7):
        text = K.dump_spectrum(joint7)
        back = K.parse_spectra(text)[0]
        np.testing.assert_array_equal(back.frequencies, joint7.frequencies)
        np.testing.assert_array_equal(back.weights, joint7.weights)
        assert back.lambda_max == joint7.lambda_max

    def test_round_trip_bytes(self, joint7, tmp_path):
        p1 = tmp_path / "a.spec"
        p2 = tmp_path / "b.spec"
        K.save_spectra(p1, [joint7])
        K.save_spectra(p2, K.load_spectra(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_multi_block_file(self, joint7, tmp_path):
        orient = K.harmonic_spectrum(
            K.make_rbf_signature(0.8, periodic=True, period=2 * math.pi), n_freq=2
        )
        path = tmp_path / "both.spec"
        K.save_spectra(path, [joint7, orient])
        specs = K.load_spectra(path)
        assert len(specs) == 2
        assert specs[0].n_kernels == 3
        assert specs[1].n_kernels == 1

    def test_bad_header_rejected(self):
        with pytest.raises(K.SpectrumFormatError):
            K.parse_spectra("WRONG v1 nkernels=1\n0 1\n")
