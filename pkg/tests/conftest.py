import numpy as np
import pytest

from spatialplan.ph_curve import QuaternionPoly, parametric_speed
from spatialplan.ph_spline import assemble, n_free_coeffs


def random_quaternion_poly(rng, degree=4, scale=1.0, wobble=0.35):
    """Random generator polynomial guaranteed regular on [0, 1].

    A dominant constant quaternion plus a bounded perturbation keeps the
    parametric speed away from zero.
    """
    base = rng.standard_normal(4)
    base *= scale / np.linalg.norm(base)
    ctrl = base + wobble * scale * rng.standard_normal((degree + 1, 4))
    Z = QuaternionPoly(ctrl)
    parametric_speed(Z)  # raises if degenerate; wobble keeps this rare
    return Z


def random_spline(rng, m=3, scale=1.0, wobble=0.3, p_initial=None):
    base = rng.standard_normal(4)
    base *= scale / np.linalg.norm(base)
    z = np.tile(base, n_free_coeffs(m) // 4)
    z += wobble * scale * rng.standard_normal(z.shape)
    if p_initial is None:
        p_initial = rng.standard_normal(3)
    return assemble(z, p_initial)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
