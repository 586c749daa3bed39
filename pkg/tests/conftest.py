import numpy as np
import pytest

from ml2rgodic import CalibrationReport, make_ou


@pytest.fixture(scope="session")
def ou1():
    return make_ou(1.0)


@pytest.fixture(scope="session")
def ou4():
    return make_ou(4.0)


def exact_calibration(ref):
    return CalibrationReport(
        sigma1_sq=ref.sigma1_sq, sigma22_sq=ref.sigma22_sq, sigma21_sq=ref.sigma21_sq,
        c_abs=ref.c_abs, c_tilde=ref.c_tilde,
        provenance={k: "exact" for k in ("sigma1_sq", "sigma22_sq", "sigma21_sq", "c_abs", "c_tilde")},
    )


@pytest.fixture(scope="session")
def calib_ou1(ou1):
    return exact_calibration(ou1[2])


@pytest.fixture(scope="session")
def calib_ou4(ou4):
    return exact_calibration(ou4[2])


def draw_admissible_q(rng, R, M, a):
    """Moderate random resizers: positive, summing to 1, floor 1/(3R), admissible."""
    from ml2rgodic.weights import check_admissible
    while True:
        q = rng.dirichlet(np.full(R, 5.0))
        if q.min() < 1.0 / (3 * R):
            continue
        try:
            check_admissible(R, M, a, q)
            return q
        except ValueError:
            continue
