"""The numba and numpy implementations must agree to roundoff, and the
dispatcher must honor the KDEEPC_BACKEND environment flag."""
import subprocess
import sys

import numpy as np
import pytest

from kdeepc._accel import codes, np_impl
from kdeepc.kernels import (
    Exponential,
    KernelSpec,
    Linear,
    Polynomial,
    Rbf,
    term,
)

nb_impl = pytest.importorskip("kdeepc._accel.nb_impl")


SPECS = [
    KernelSpec((term(1.0, Linear()),)),
    KernelSpec((term(0.2, Rbf(6.0)), term(1.0, Exponential()),
                term(0.01, Rbf(6.0), Exponential()))),
    KernelSpec((term(0.1, Rbf(4.0)), term(1.0, Rbf(4.0), Exponential()))),
    KernelSpec((term(0.5, Polynomial(3, 0.7), Linear()),
                term(2.0, Polynomial(2, 1.0)))),
]


@pytest.mark.parametrize("spec_index", range(len(SPECS)))
@pytest.mark.parametrize("dim", [1, 3])
def test_primitives_agree(spec_index, dim):
    code = codes.encode(SPECS[spec_index])
    rng = np.random.default_rng(spec_index * 10 + dim)
    d = np.ascontiguousarray(rng.normal(scale=0.7, size=(40, dim)))
    q = np.ascontiguousarray(rng.normal(scale=0.7, size=(5, dim)))
    coef = np.ascontiguousarray(rng.normal(size=12))

    pairs_np = np_impl.pair_eval(*code, q, d)
    pairs_nb = nb_impl.pair_eval(*code, q, d)
    np.testing.assert_allclose(pairs_nb, pairs_np, rtol=1e-9, atol=1e-12)

    sh_np = np_impl.shift_eval(*code, q, d, 3, 12)
    sh_nb = nb_impl.shift_eval(*code, q, d, 3, 12)
    np.testing.assert_allclose(sh_nb, sh_np, rtol=1e-9, atol=1e-12)

    gr_np = np_impl.shift_grad(*code, q, d, 3, 12, coef)
    gr_nb = nb_impl.shift_grad(*code, q, d, 3, 12, coef)
    np.testing.assert_allclose(gr_nb, gr_np, rtol=1e-9, atol=1e-12)

    np.testing.assert_allclose(
        nb_impl.self_eval(*code, q), np_impl.self_eval(*code, q),
        rtol=1e-12, atol=1e-15,
    )
    np.testing.assert_allclose(
        nb_impl.self_grad(*code, q), np_impl.self_grad(*code, q),
        rtol=1e-12, atol=1e-15,
    )


def test_batch_matches_scalar_evaluate():
    from kdeepc import _accel
    from kdeepc.kernels import evaluate, grad_y

    spec = SPECS[1]
    code = codes.encode(spec)
    rng = np.random.default_rng(9)
    d = rng.normal(scale=0.6, size=(15, 2))
    q = rng.normal(scale=0.6, size=(4, 2))
    block = _accel.pair_eval(code, q, d)
    for i in range(4):
        for j in range(15):
            assert block[i, j] == pytest.approx(evaluate(spec, q[i], d[j]), rel=1e-12)
    coef = rng.normal(size=6)
    grads = _accel.shift_grad(code, q, d, 2, 6, coef)
    for p in range(4):
        direct = sum(
            coef[i] * grad_y(spec, d[2 + p + i], q[p]) for i in range(6)
        )
        np.testing.assert_allclose(grads[p], direct, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("flag,expected", [("numpy", "numpy"), ("numba", "numba")])
def test_env_flag_selects_backend(flag, expected):
    script = (
        "from kdeepc import _accel; print(_accel.active_backend())"
    )
    out = subprocess.run(
        [sys.executable, "-c", script],
        capture_output=True,
        text=True,
        env={"KDEEPC_BACKEND": flag, "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == expected


def test_invalid_env_flag_rejected():
    script = "import kdeepc._accel"
    out = subprocess.run(
        [sys.executable, "-c", script],
        capture_output=True,
        text=True,
        env={"KDEEPC_BACKEND": "cuda", "PATH": "/usr/bin:/bin"},
    )
    assert out.returncode != 0
    assert "KDEEPC_BACKEND" in out.stderr
