import math

import numpy as np
import jax.numpy as jnp
import pytest

from errors import DegenerateGradient, DegenerateInput
from levelset_geometry import (
    ExtendedOps, LevelSetField, axial_profile, batched, biconcave, center_point, closest_point,
    closest_point_batch, d0, d_presets, eval_batch, eval_jet3, frame, frame_batch, plane, resolve_d, sphere,
)
from surface_mesh import build_base_mesh


def _random_directions(n, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


def test_sphere_values_and_derivatives():
    """phi = x.x - r^2 with gradient 2x and Hessian 2I."""
    jet = eval_jet3(sphere(2.0), [1.0, 2.0, 0.0])
    assert jet.value == pytest.approx(1.0)
    np.testing.assert_allclose(jet.gradient, [2.0, 4.0, 0.0])
    np.testing.assert_allclose(jet.hessian, 2.0 * np.eye(3))
    np.testing.assert_allclose(jet.third, np.zeros((3, 3, 3)))


def test_invalid_fields():
    with pytest.raises(DegenerateInput, match="Unknown surface kind"):
        LevelSetField("torus")
    with pytest.raises(DegenerateInput, match="splits the biconcave surface"):
        biconcave(0.95, 0.98)
    with pytest.raises(DegenerateInput, match="radius must be positive"):
        sphere(0.0)


def test_sphere_frame():
    """Unit normal, projector and curvatures of a sphere of radius 2."""
    f = frame(sphere(2.0), [0.0, 0.0, 2.0])
    np.testing.assert_allclose(f.normal, [0.0, 0.0, 1.0])
    np.testing.assert_allclose(f.projector, np.diag([1.0, 1.0, 0.0]), atol=1e-15)
    assert f.mean == pytest.approx(1.0)
    assert f.gauss == pytest.approx(0.25)


def test_plane_is_flat():
    f = frame(plane(0.5), [0.3, -0.2, 0.5])
    np.testing.assert_allclose(f.normal, [0.0, 0.0, 1.0])
    assert f.gauss == 0.0
    assert f.mean == 0.0
    assert not plane().closed


def test_frame_rejects_vanishing_gradient():
    with pytest.raises(DegenerateGradient, match="vanishes"):
        frame_batch(sphere(1.0), np.zeros((1, 3)))


@pytest.mark.parametrize("name,expected", [
    ("0", (1.07, 2.07)),
    ("d0", (0.0, 0.0)),
    ("0.8", (3.12, -3.53)),
    ("0.96", (268.76, -32.79)),
])
def test_curvature_at_axis_point(name, expected):
    """Gaussian and mean curvature at x_c for the four benchmark shapes."""
    field = biconcave(0.95, d_presets(0.95)[name])
    f = frame(field, center_point(field))
    assert abs(float(eval_batch(field, center_point(field)[None, :])[0][0])) < 1e-12
    assert f.gauss == pytest.approx(expected[0], abs=0.01)
    assert f.mean == pytest.approx(expected[1], abs=0.01)


def test_d0_flattens_the_axis_point():
    """At d0 both curvatures vanish exactly at x_c."""
    field = biconcave(0.95, d0(0.95))
    f = frame(field, center_point(field))
    assert abs(f.gauss) < 1e-10
    assert abs(f.mean) < 1e-10


def test_resolve_d():
    assert resolve_d("d0") == d0(0.95)
    assert resolve_d("0.96") == 0.96
    assert resolve_d(0.5) == 0.5
    with pytest.raises(DegenerateInput, match="Unknown d preset"):
        resolve_d("flat")


def test_closest_point_on_sphere():
    """Projection onto a sphere is radial scaling."""
    points = 1.3 * _random_directions(50)
    projected = closest_point_batch(sphere(1.0), points)
    np.testing.assert_allclose(projected, points / 1.3, atol=1e-12)
    np.testing.assert_allclose(closest_point(sphere(1.0), [2.0, 0.0, 0.0]), [1.0, 0.0, 0.0], atol=1e-14)


def test_closest_point_on_biconcave(rbc_field, rbc_mesh):
    """Points pushed off the surface along the normal project back to where they started."""
    vertices = rbc_mesh.vertices
    normals, _, _, _, _ = frame_batch(rbc_field, vertices)
    seeds = vertices + 0.02 * normals
    projected = closest_point_batch(rbc_field, seeds)
    values, _, _ = eval_batch(rbc_field, projected)
    assert np.max(np.abs(values)) < 1e-10
    np.testing.assert_allclose(projected, vertices, atol=1e-8)


def test_axial_profile():
    profile, r_out = axial_profile(sphere(2.0))
    assert r_out == 2.0
    assert profile(np.array([0.0]))[0] == pytest.approx(2.0)

    field = biconcave(0.95, 0.96)
    profile, r_out = axial_profile(field)
    assert profile(np.array([0.0]))[0] == pytest.approx(center_point(field)[0], rel=1e-12)
    assert profile(np.array([r_out]))[0] == pytest.approx(0.0, abs=1e-6)
    rim = np.array([0.0, r_out, 0.0])
    assert abs(float(eval_batch(field, rim[None, :])[0][0])) < 1e-10
    with pytest.raises(DegenerateInput, match="closed surfaces"):
        axial_profile(plane())


def test_curl_of_height_on_sphere():
    """n x grad_Gamma z at (1, 0, 0) is (0, -1, 0)."""
    ops = ExtendedOps(sphere(1.0))
    u = ops.curl_scalar(lambda x: x[2])
    np.testing.assert_allclose(np.asarray(u(jnp.array([1.0, 0.0, 0.0]))), [0.0, -1.0, 0.0], atol=1e-15)


def test_rotation_is_divergence_free_on_sphere():
    ops = ExtendedOps(sphere(1.0))
    rotation = batched(ops.div(lambda x: jnp.cross(jnp.array([0.0, 0.0, 1.0]), x)))
    values = rotation(_random_directions(20, seed=1))
    assert np.max(np.abs(values)) < 1e-12


def test_surface_gradient_is_tangential(rbc_field):
    ops = ExtendedOps(rbc_field)
    grad = batched(ops.surface_gradient(lambda x: x[0] ** 3 + x[0] * x[1] * x[2]))
    points = closest_point_batch(rbc_field, 0.8 * _random_directions(10, seed=2))
    normals, _, _, _, _ = frame_batch(rbc_field, points)
    assert np.max(np.abs(np.einsum("ni,ni->n", grad(points), normals))) < 1e-12


def test_batched_handles_empty_input():
    fn = batched(lambda x: x * 2.0)
    assert fn(np.zeros((0, 3))).shape == (0, 3)
    np.testing.assert_allclose(fn(np.ones((2, 3))), 2.0 * np.ones((2, 3)))


def _central_differences(fn, points, step=1e-6):
    """d fn / d x_k stacked on a trailing axis, fn maps (N, 3) to (N, ...)."""
    columns = [(fn(points + step * e) - fn(points - step * e)) / (2 * step) for e in np.eye(3)]
    return np.stack(columns, axis=-1)


def _near_surface_points(field, spread=0.03, seed=0):
    """Vertices of a 320-triangle mesh pushed a random distance along the normal."""
    vertices = build_base_mesh(field, 1, base_level=1).vertices
    normals, _, _, _, _ = frame_batch(field, vertices)
    offsets = np.random.default_rng(seed).uniform(-spread, spread, size=len(vertices))
    return vertices + offsets[:, None] * normals


def test_jet_against_finite_differences(rbc_field):
    """Gradient, Hessian and third derivatives of the biconcave phi agree with central differences."""
    points = _near_surface_points(rbc_field)[::16]
    jets = [eval_jet3(rbc_field, x) for x in points]
    step = 1e-5
    for x, jet in zip(points, jets):
        shifted = [(eval_jet3(rbc_field, x + step * e), eval_jet3(rbc_field, x - step * e)) for e in np.eye(3)]
        grad = np.array([(p.value - m.value) / (2 * step) for p, m in shifted])
        hess = np.stack([(p.gradient - m.gradient) / (2 * step) for p, m in shifted], axis=-1)
        third = np.stack([(p.hessian - m.hessian) / (2 * step) for p, m in shifted], axis=-1)
        np.testing.assert_allclose(jet.gradient, grad, rtol=0, atol=1e-7 * max(1.0, np.max(np.abs(grad))))
        np.testing.assert_allclose(jet.hessian, hess, rtol=0, atol=1e-7 * max(1.0, np.max(np.abs(hess))))
        np.testing.assert_allclose(jet.third, third, rtol=0, atol=1e-7 * max(1.0, np.max(np.abs(third))))
        value, _, _ = eval_batch(rbc_field, x[None, :])
        assert jet.value == pytest.approx(float(value[0]), abs=1e-14)


def test_closest_point_is_idempotent(rbc_field):
    projected = closest_point_batch(rbc_field, _near_surface_points(rbc_field, seed=3))
    again = closest_point_batch(rbc_field, projected)
    np.testing.assert_allclose(again, projected, atol=1e-12)


@pytest.mark.parametrize("name", ["0", "d0", "0.8", "0.96"])
def test_frame_invariants_near_the_surface(name):
    """Unit normal, H symmetric and tangential at random points off the surface."""
    field = biconcave(0.95, d_presets(0.95)[name])
    points = _near_surface_points(field, seed=5)
    n, proj, weingarten, gauss, mean = frame_batch(field, points)
    scale = max(1.0, np.max(np.abs(weingarten)))
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(np.einsum("nij,nj->ni", proj, n))) < 1e-12
    assert np.max(np.abs(np.einsum("nij,nj->ni", weingarten, n))) < 1e-10 * scale
    np.testing.assert_allclose(weingarten, np.transpose(weingarten, (0, 2, 1)), atol=1e-12 * scale)
    np.testing.assert_allclose(mean, np.trace(weingarten, axis1=1, axis2=2))
    expected = 0.5 * (mean ** 2 - np.einsum("nij,nji->n", weingarten, weingarten))
    np.testing.assert_allclose(gauss, expected)


def _scalar(x):
    return x[0] ** 3 + x[0] * x[1] * x[2]


def _vector(x):
    return jnp.array([x[1] * x[2], x[0] ** 2 - x[2], x[0] * x[1] * x[2]])


def _tensor(x):
    return jnp.outer(_vector(x), x)


@pytest.fixture(scope="module")
def ops_points(rbc_field):
    return _near_surface_points(rbc_field, spread=0.01, seed=7)[::4]


@pytest.fixture(scope="module")
def ops_frames(rbc_field, ops_points):
    n, proj, _, _, _ = frame_batch(rbc_field, ops_points)
    return n, proj


def test_surface_gradients_against_finite_differences(rbc_field, ops_points, ops_frames):
    ops = ExtendedOps(rbc_field)
    n, proj = ops_frames
    grad = _central_differences(batched(_scalar), ops_points)
    np.testing.assert_allclose(batched(ops.surface_gradient(_scalar))(ops_points),
                               np.einsum("nij,nj->ni", proj, grad), atol=1e-8)
    np.testing.assert_allclose(batched(ops.curl_scalar(_scalar))(ops_points),
                               np.cross(n, np.einsum("nij,nj->ni", proj, grad)), atol=1e-8)

    jac = _central_differences(batched(_vector), ops_points)
    tangential = np.einsum("nij,njk,nkl->nil", proj, jac, proj)
    np.testing.assert_allclose(batched(ops.surface_gradient_vector(_vector))(ops_points), tangential, atol=1e-8)
    np.testing.assert_allclose(batched(ops.deformation(_vector))(ops_points),
                               0.5 * (tangential + np.transpose(tangential, (0, 2, 1))), atol=1e-8)
    np.testing.assert_allclose(batched(ops.div(_vector))(ops_points),
                               np.trace(tangential, axis1=1, axis2=2), atol=1e-8)


def test_tensor_divergence_against_finite_differences(rbc_field, ops_points, ops_frames):
    """(div A)_i = sum_jk d_k A_ij P_jk."""
    ops = ExtendedOps(rbc_field)
    _, proj = ops_frames
    dtensor = _central_differences(batched(_tensor), ops_points)
    np.testing.assert_allclose(batched(ops.div_tensor(_tensor))(ops_points),
                               np.einsum("nijk,njk->ni", dtensor, proj), atol=1e-8)


def test_vector_curl_against_finite_differences(rbc_field, ops_points, ops_frames):
    """curl of v is the surface divergence of v x n, differenced through the normal field."""
    ops = ExtendedOps(rbc_field)
    _, proj = ops_frames
    vector = batched(_vector)

    def twisted(points):
        normals, _, _, _, _ = frame_batch(rbc_field, points)
        return np.cross(vector(points), normals)

    jac = _central_differences(twisted, ops_points)
    expected = np.einsum("nij,nji->n", proj, jac)
    np.testing.assert_allclose(batched(ops.curl_vector(_vector))(ops_points), expected, atol=1e-8)


def test_vector_curl_of_a_constant_field_on_sphere():
    """e_z x n is a rotation on the unit sphere, so the curl of e_z vanishes there."""
    ops = ExtendedOps(sphere(1.0))
    curl = batched(ops.curl_vector(lambda x: jnp.array([0.0, 0.0, 1.0]) + 0.0 * x))
    assert np.max(np.abs(curl(_random_directions(20, seed=4)))) < 1e-13
