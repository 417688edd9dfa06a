import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmwsparse.geometry import PointScattererSet, SceneVolume, SystemGeometry, scene_from_points, scene_origin
from mmwsparse.physics import (
    EchoCube,
    adjoint_array,
    adjoint_operator,
    brute_force_echo,
    echo_phase_gradient,
    forward_array,
    forward_operator,
    rma_reconstruct,
)

from conftest import crandn
from oracles import C, naive_forward


def test_forward_matches_naive_dft(small_geom, rng):
    scene = crandn(rng, small_geom.scene_shape)
    diff = np.abs(forward_array(scene, small_geom) - naive_forward(scene, small_geom)).max()
    assert diff < 1e-9


def test_forward_zero_scene_gives_zero_echo(small_geom):
    echo = forward_operator(SceneVolume(np.zeros(small_geom.scene_shape), small_geom.scene_pitch), small_geom)
    assert not echo.data.any()


def test_forward_rejects_mismatched_dims(small_geom):
    with pytest.raises(ValueError, match="dims"):
        forward_operator(SceneVolume(np.zeros((4, 4, 4)), small_geom.scene_pitch), small_geom)


def test_forward_rejects_mismatched_pitch(small_geom):
    with pytest.raises(ValueError, match="pitch"):
        forward_operator(SceneVolume(np.zeros(small_geom.scene_shape), (1.0, 1.0, 1.0)), small_geom)


def test_adjoint_rejects_mismatched_dims(small_geom):
    with pytest.raises(ValueError, match="dims"):
        adjoint_operator(np.zeros((3, 3, 3)), small_geom)


def test_adjoint_of_zero_is_zero(small_geom):
    out = adjoint_operator(EchoCube(np.zeros(small_geom.echo_shape), small_geom), small_geom)
    assert not out.data.any()


@pytest.mark.parametrize("trial", range(5))
def test_adjoint_identity(small_geom, trial):
    rng = np.random.default_rng(trial)
    x = crandn(rng, small_geom.scene_shape)
    y = crandn(rng, small_geom.echo_shape)
    lhs = np.vdot(y, forward_array(x, small_geom))
    rhs = np.vdot(adjoint_array(y, small_geom), x)
    assert abs(lhs - rhs) / abs(lhs) < 1e-10


@settings(max_examples=15, deadline=None)
@given(re=st.floats(-5, 5), im=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_operators_are_linear(re, im, seed):
    geom = SystemGeometry(n_vertical=8, n_horizontal=6, n_range=4, n_freq=7)
    rng = np.random.default_rng(seed)
    a = complex(re, im)
    x1, x2 = crandn(rng, geom.scene_shape), crandn(rng, geom.scene_shape)
    y1 = crandn(rng, geom.echo_shape)
    np.testing.assert_allclose(forward_array(a * x1 + x2, geom), a * forward_array(x1, geom) + forward_array(x2, geom), atol=1e-9)
    np.testing.assert_allclose(adjoint_array(a * y1, geom), a * adjoint_array(y1, geom), atol=1e-9)


def _peak(vol):
    return np.unravel_index(np.argmax(np.abs(vol.data)), vol.shape)


def test_rma_of_zero_echo_is_zero(small_geom):
    assert not rma_reconstruct(EchoCube(np.zeros(small_geom.echo_shape), small_geom), small_geom).data.any()


def test_rma_point_peak_at_centre(desk_geom):
    pts = PointScattererSet.from_tuples([(0.0, 0.0, desk_geom.standoff_r0, 1.0)])
    vol = rma_reconstruct(brute_force_echo(pts, desk_geom), desk_geom)
    centre = np.array(desk_geom.scene_shape) // 2
    assert np.all(np.abs(np.array(_peak(vol)) - centre) <= 1)


def test_rma_resolves_two_points(desk_geom):
    r0 = desk_geom.standoff_r0
    pts = PointScattererSet.from_tuples([(-0.01, 0.0, r0, 1.0), (0.01, 0.0, r0, 1.0)])
    vol = rma_reconstruct(brute_force_echo(pts, desk_geom), desk_geom)
    profile = np.abs(vol.data).max(axis=2)[:, 32]
    top2 = sorted(np.argsort(profile)[-2:])
    assert top2 == [30, 34]
    assert profile[32] < min(profile[30], profile[34])


def test_brute_force_single_point_formula():
    geom = SystemGeometry(n_vertical=9, n_horizontal=7, n_freq=1, f_min=35e9, f_max=35e9, n_range=4)
    amp = 0.7 - 0.2j
    echo = brute_force_echo(PointScattererSet.from_tuples([(0.0, 0.0, geom.standoff_r0, amp)]), geom)
    ev, eh = geom.element_positions()
    k = 2 * np.pi * 35e9 / C
    r = np.sqrt(ev[:, None] ** 2 + eh[None, :] ** 2 + geom.standoff_r0**2)
    np.testing.assert_allclose(np.abs(echo.data[:, :, 0]), abs(amp), rtol=1e-12)
    np.testing.assert_allclose(echo.data[:, :, 0], amp * np.exp(-2j * k * r), atol=1e-12)


def test_brute_force_zero_amplitude_and_superposition(small_geom):
    r0 = small_geom.standoff_r0
    p, q = (0.01, -0.005, r0, 1 + 1j), (-0.02, 0.0, r0 + 0.01, 0.5)
    assert not brute_force_echo(PointScattererSet.from_tuples([(0, 0, r0, 0)]), small_geom).data.any()
    both = brute_force_echo(PointScattererSet.from_tuples([p, q]), small_geom).data
    each = brute_force_echo(PointScattererSet.from_tuples([p]), small_geom).data + brute_force_echo(PointScattererSet.from_tuples([q]), small_geom).data
    np.testing.assert_allclose(both, each, atol=1e-12)


def test_brute_force_rejects_empty(small_geom):
    with pytest.raises(ValueError, match="empty"):
        brute_force_echo(PointScattererSet.from_tuples([]), small_geom)


def test_phase_gradient_of_uniform_echo_is_zero():
    assert not echo_phase_gradient(np.full((6, 5), 2 - 1j)).any()


def test_phase_gradient_flat_for_extended_scene(desk_geom):
    data = np.zeros(desk_geom.scene_shape, complex)
    data[:, :, desk_geom.n_range // 2] = 1.0
    echo = forward_operator(SceneVolume(data, desk_geom.scene_pitch, scene_origin(desk_geom)), desk_geom)
    assert echo_phase_gradient(echo)[1:-1, 1:-1].max() < 1e-3


def test_phase_gradient_grows_away_from_broadside():
    # 1 mm pitch keeps the per-element phase step below pi so unwrapping is exact
    geom = SystemGeometry(n_vertical=33, n_horizontal=33, d_vertical=0.001, d_horizontal=0.001, n_range=4, d_range=0.001)
    ev, eh = geom.element_positions()
    pts = PointScattererSet.from_tuples([(ev[10], eh[16], geom.standoff_r0, 1.0)])
    grad = echo_phase_gradient(brute_force_echo(pts, geom))
    row = grad[10]
    right, left = row[16:], row[16::-1]
    assert np.all(np.diff(right) > 0) and np.all(np.diff(left) > 0)
    col = grad[:, 16]
    assert np.all(np.diff(col[10:]) > 0) and np.all(np.diff(col[10::-1]) > 0)


def test_phase_gradient_rejects_3d_arrays():
    with pytest.raises(ValueError):
        echo_phase_gradient(np.zeros((2, 2, 2)))


def test_echo_cube_validation(small_geom):
    with pytest.raises(ValueError, match="dims"):
        EchoCube(np.zeros((2, 2, 2)), small_geom)
    with pytest.raises(ValueError, match="non-finite"):
        EchoCube(np.full(small_geom.echo_shape, np.inf), small_geom)
