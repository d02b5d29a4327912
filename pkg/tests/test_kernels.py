import os
import subprocess
import sys

import numpy as np
import pytest

from hvboussinesq import _kernels as K
from hvboussinesq.mesh import build_rect_mesh
from hvboussinesq.spaces import element_data

NAMES = ("stiffness", "mass", "mixed_mass", "advection", "elasticity", "divergence", "load")


def _cases():
    ed = element_data(build_rect_mesh(3, 2))
    rng = np.random.default_rng(0)
    vel = rng.standard_normal(ed.weights.shape + (2,))
    f = rng.standard_normal(ed.weights.shape)
    return {
        "stiffness": (ed.p2_grads, ed.weights),
        "mass": (ed.p2_vals, ed.weights),
        "mixed_mass": (ed.p1_vals, ed.p2_vals, ed.weights),
        "advection": (ed.p2_vals, ed.p2_grads, vel, ed.weights),
        "elasticity": (ed.p2_grads, ed.weights),
        "divergence": (ed.p1_vals, ed.p2_grads, ed.weights),
        "load": (ed.p1_vals, f, ed.weights),
    }


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("name", NAMES)
def test_numba_matches_numpy(name):
    args = _cases()[name]
    a = getattr(K, "np_" + name)(*args)
    b = getattr(K, "nb_" + name)(*args)
    assert a.shape == b.shape
    assert np.allclose(a, b, rtol=1e-13, atol=1e-14 * np.max(np.abs(a)))


def test_elasticity_is_symmetric():
    a = K.np_elasticity(*_cases()["elasticity"])
    assert np.allclose(a, np.swapaxes(a, 1, 2), atol=1e-14)


def test_env_flag_selects_numpy():
    code = "from hvboussinesq import _kernels as K; print(K.BACKEND, K.stiffness is K.np_stiffness)"
    env = dict(os.environ, HVBOUSSINESQ_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
