import math

import numpy as np
import pytest

from afm import kernels as K
from afm.maps import AxisSpectra


@pytest.fixture(scope="session")
def fast_spectra() -> AxisSpectra:
    """Hand-built spectra with the default (5, 2) shape; no LP solve.

    Weights are arbitrary positive numbers, which is all most structural
    tests need. Three spatial kernel rows mimic the three search scales.
    """
    rng = np.random.default_rng(7)
    freqs_x = np.array([0.0, 1.75, 3.25, 4.75, 6.25])
    w = rng.uniform(0.05, 0.5, size=(3, 5))
    spatial = K.Spectrum(frequencies=freqs_x, weights=w)
    orientation = K.Spectrum(
        frequencies=np.array([0.0, 1.0]), weights=np.array([[0.32, 0.46]])
    )
    return AxisSpectra(spatial=spatial, orientation=orientation)


@pytest.fixture(scope="session")
def paper_spectra() -> AxisSpectra:
    """The production configuration: joint 5-frequency spatial fit of the
    three search-scale kernels plus the 2-frequency orientation kernel."""
    pool = K.default_pool()
    sigs = [K.make_rbf_signature(s) for s in (0.12, 0.16, 0.20)]
    spatial = K.spectrum_for_dim(sigs, pool, 5)
    orientation = K.harmonic_spectrum(
        K.make_rbf_signature(0.8, periodic=True, period=2 * math.pi), n_freq=2
    )
    return AxisSpectra(spatial=spatial, orientation=orientation)
