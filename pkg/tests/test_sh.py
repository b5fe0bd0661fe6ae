import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from echotrace.sh import acn, n_channels, real_sh, rotate_directions_yaw


def _unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _closed_form(d):
    """SN3D real SH up to order 2 in ACN order, written out by hand."""
    x, y, z = d
    s3 = math.sqrt(3.0)
    return np.array([1.0, y, z, x, s3 * x * y, s3 * y * z, 0.5 * (3 * z * z - 1), s3 * x * z,
                     0.5 * s3 * (x * x - y * y)])


def test_channel_counts():
    assert [n_channels(o) for o in range(4)] == [1, 4, 9, 16]
    assert [acn(1, -1), acn(1, 0), acn(1, 1), acn(2, -2)] == [1, 2, 3, 4]


def test_matches_closed_form(rng):
    for d in _unit(rng, 50):
        assert np.allclose(real_sh(2, d), _closed_form(d), atol=1e-12)


def test_axes():
    assert np.allclose(real_sh(1, [1, 0, 0]), [1, 0, 0, 1])
    assert np.allclose(real_sh(1, [0, 1, 0]), [1, 1, 0, 0])
    assert np.allclose(real_sh(1, [0, 0, 1]), [1, 0, 1, 0])


def test_sn3d_orthogonality():
    # Gauss-Legendre in z times uniform in phi integrates degree <= 6 exactly
    zs, wz = np.polynomial.legendre.leggauss(8)
    phi = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    Z, P = np.meshgrid(zs, phi, indexing="ij")
    W = np.repeat(wz[:, None], len(phi), axis=1) * (2 * np.pi / len(phi))
    r = np.sqrt(1 - Z**2)
    d = np.stack([r * np.cos(P), r * np.sin(P), Z], axis=-1).reshape(-1, 3)
    y = real_sh(3, d)
    gram = (y * W.reshape(-1, 1)).T @ y
    expect = np.diag([4 * np.pi / (2 * l + 1) for l in range(4) for _ in range(2 * l + 1)])
    assert np.allclose(gram, expect, atol=1e-10)


def test_shape_broadcast(rng):
    d = _unit(rng, 12).reshape(3, 4, 3)
    assert real_sh(2, d).shape == (3, 4, 9)


def test_yaw_rotation_quarter_turn():
    assert np.allclose(rotate_directions_yaw([1, 0, 0], math.pi / 2), [0, 1, 0])


@given(st.floats(-math.pi, math.pi), st.integers(0, 2**31))
def test_per_order_energy_invariant_under_yaw(yaw, seed):
    d = _unit(np.random.default_rng(seed), 1)[0]
    a = real_sh(3, d)
    b = real_sh(3, rotate_directions_yaw(d, yaw))
    for l in range(4):
        sl = slice(l * l, (l + 1) ** 2)
        assert np.sum(a[sl] ** 2) == pytest.approx(np.sum(b[sl] ** 2), rel=1e-9, abs=1e-12)


@given(st.integers(0, 2**31))
def test_sn3d_bounded_by_one(seed):
    y = real_sh(3, _unit(np.random.default_rng(seed), 20))
    assert np.all(np.abs(y) <= 1 + 1e-12)
