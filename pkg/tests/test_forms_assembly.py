import numpy as np
import pytest

from fem_spaces import ScalarSpace, VectorSpace, interpolate
from forms_assembly import (
    AssemblyContext, assemble_a_Th, assemble_b, assemble_mass_scalar, assemble_mass_vector, assemble_penalty,
    assemble_stiffness, assemble_stiffness_K, constant_load, is_symmetric, load_f, load_g, load_pressure_reconstruction,
    load_velocity_reconstruction, merge_triplets,
)
from error_metrics import eoc
from levelset_geometry import plane
from parametric_surface import area, build_curved, longest_edge
from surface_mesh import LinearSurfaceMesh, build_base_mesh

# unit square in z = 0 split along the (1,0)-(0,1) diagonal
SQUARE_VERTICES = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]
SQUARE_TRIANGLES = [[0, 1, 2], [1, 3, 2]]

PLANAR_STIFFNESS = np.array([
    [1.0, -0.5, -0.5, 0.0],
    [-0.5, 1.0, 0.0, -0.5],
    [-0.5, 0.0, 1.0, -0.5],
    [0.0, -0.5, -0.5, 1.0],
])
PLANAR_MASS = np.array([
    [2.0, 1.0, 1.0, 0.0],
    [1.0, 4.0, 2.0, 1.0],
    [1.0, 2.0, 4.0, 1.0],
    [0.0, 1.0, 1.0, 2.0],
]) / 24.0
# planar P1 gradients per triangle, keyed by vertex
SQUARE_GRADIENTS = [
    {0: (-1.0, -1.0), 1: (1.0, 0.0), 2: (0.0, 1.0)},
    {1: (0.0, -1.0), 3: (1.0, 1.0), 2: (-1.0, 0.0)},
]


def _swirl(points):
    return np.column_stack([points[:, 1], -points[:, 0], points[:, 2] ** 2])


@pytest.fixture(scope="module")
def flat_context():
    mesh = LinearSurfaceMesh(SQUARE_VERTICES, SQUARE_TRIANGLES)
    return AssemblyContext(build_curved(mesh, plane(0.0), 1))


@pytest.fixture(scope="module")
def sphere_context(sphere_surface2):
    return AssemblyContext(sphere_surface2, threads=1)


def test_merge_triplets_sums_duplicates():
    matrix = merge_triplets([0, 1, 0, 0], [1, 1, 1, 0], [1.0, 2.0, 3.0, 4.0], (2, 2))
    np.testing.assert_allclose(matrix.toarray(), [[4.0, 4.0], [0.0, 2.0]])
    assert merge_triplets([], [], [], (3, 3)).nnz == 0


def test_flat_patch_matches_planar_p1(flat_context):
    """On a flat patch the surface forms are the planar P1 matrices."""
    space = ScalarSpace(flat_context.surface, 1)
    np.testing.assert_allclose(assemble_stiffness(flat_context, space).toarray(), PLANAR_STIFFNESS, atol=1e-12)
    np.testing.assert_allclose(assemble_mass_scalar(flat_context, space).toarray(), PLANAR_MASS, atol=1e-12)
    # K = 0 on a plane, so L_K = 2 L
    np.testing.assert_allclose(assemble_stiffness_K(flat_context, space).toarray(), 2.0 * PLANAR_STIFFNESS,
                               atol=1e-12)
    np.testing.assert_allclose(constant_load(flat_context, space), [1 / 6, 1 / 3, 1 / 3, 1 / 6], atol=1e-12)


def test_flat_patch_vector_forms(flat_context):
    """Vector mass is block diagonal; the penalty only sees the z component."""
    space = VectorSpace(flat_context.surface, 1)
    mass = assemble_mass_vector(flat_context, space).toarray()
    penalty = assemble_penalty(flat_context, space).toarray()
    for c in range(3):
        np.testing.assert_allclose(mass[c::3, c::3], PLANAR_MASS, atol=1e-12)
    np.testing.assert_allclose(mass[0::3, 1::3], 0.0, atol=1e-15)
    np.testing.assert_allclose(penalty[2::3, 2::3], flat_context.eta * PLANAR_MASS, rtol=1e-12)
    np.testing.assert_allclose(penalty[0::3, :], 0.0, atol=1e-15)


def test_default_eta_is_inverse_square_edge(flat_context):
    assert flat_context.eta == pytest.approx(longest_edge(flat_context.surface) ** -2)
    assert flat_context.eta == pytest.approx(0.5)
    assert AssemblyContext(flat_context.surface, eta=7.0).eta == 7.0


def test_symmetric_forms(sphere_context, sphere_surface2):
    scalar = ScalarSpace(sphere_surface2, 3)
    vector = VectorSpace(sphere_surface2, 2)
    for matrix in (
        assemble_mass_scalar(sphere_context, scalar),
        assemble_stiffness(sphere_context, scalar),
        assemble_stiffness_K(sphere_context, scalar),
        assemble_a_Th(sphere_context, vector),
        assemble_penalty(sphere_context, vector),
    ):
        assert is_symmetric(matrix, 1e-10)


def test_constants_and_area(sphere_context, sphere_surface2):
    """1^T M 1 is the area, L 1 = 0 and gradients of constants vanish in b."""
    scalar = ScalarSpace(sphere_surface2, 2)
    ones = np.ones(scalar.dim)
    total = area(sphere_surface2)
    assert ones @ assemble_mass_scalar(sphere_context, scalar) @ ones == pytest.approx(total, rel=1e-12)
    assert np.sum(constant_load(sphere_context, scalar)) == pytest.approx(total, rel=1e-12)
    assert np.max(np.abs(assemble_stiffness(sphere_context, scalar) @ ones)) < 1e-12

    b = assemble_b(sphere_context, VectorSpace(sphere_surface2, 2), ScalarSpace(sphere_surface2, 1))
    assert b.shape == (ScalarSpace(sphere_surface2, 1).dim, VectorSpace(sphere_surface2, 2).dim)
    assert np.max(np.abs(np.ones(b.shape[0]) @ b)) < 1e-12


def test_rigid_rotation_has_no_strain_energy(sphere_context, sphere_surface2):
    """E_{T,h} of the interpolated rotation about z is small, so a_T reduces to the mass term."""
    space = VectorSpace(sphere_surface2, 2)
    rotation = interpolate(space, lambda p: np.cross(np.array([0.0, 0.0, 1.0]), p))
    a = assemble_a_Th(sphere_context, space)
    mass = assemble_mass_vector(sphere_context, space)
    energy = rotation @ a @ rotation
    assert energy == pytest.approx(rotation @ mass @ rotation, rel=0.05)


def test_thread_count_does_not_change_results(sphere_surface2):
    """Chunked parallel assembly merges in triangle order."""
    space = VectorSpace(sphere_surface2, 2)
    serial = assemble_a_Th(AssemblyContext(sphere_surface2, threads=1, chunk_size=7), space)
    parallel = assemble_a_Th(AssemblyContext(sphere_surface2, threads=4, chunk_size=7), space)
    assert (serial != parallel).nnz == 0
    ctx1 = AssemblyContext(sphere_surface2, threads=1, chunk_size=7)
    ctx4 = AssemblyContext(sphere_surface2, threads=4, chunk_size=7)
    np.testing.assert_array_equal(load_f(ctx1, space, _swirl), load_f(ctx4, space, _swirl))


def test_zero_forcing_gives_zero_loads(sphere_context, sphere_surface2):
    assert not np.any(load_f(sphere_context, VectorSpace(sphere_surface2, 2), None))
    assert not np.any(load_g(sphere_context, ScalarSpace(sphere_surface2, 3), None))


def _planar_gradient_products():
    """G[c, d, a, b] = int d_c phi_a d_d phi_b over the square."""
    products = np.zeros((2, 2, 4, 4))
    for grads in SQUARE_GRADIENTS:
        for a, ga in grads.items():
            for b, gb in grads.items():
                products[:, :, a, b] += 0.5 * np.outer(ga, gb)
    return products


def test_flat_patch_strain_form(flat_context):
    """E(phi_a e_c):E(phi_b e_d) = (delta_cd grad phi_a . grad phi_b + d_d phi_a d_c phi_b) / 2 in the plane."""
    space = VectorSpace(flat_context.surface, 1)
    a = assemble_a_Th(flat_context, space).toarray()
    products = _planar_gradient_products()
    stiffness = products[0, 0] + products[1, 1]
    np.testing.assert_allclose(stiffness, PLANAR_STIFFNESS, atol=1e-15)
    for c in range(2):
        for d in range(2):
            expected = 0.5 * products[d, c] + (0.5 * stiffness + PLANAR_MASS if c == d else 0.0)
            np.testing.assert_allclose(a[c::3, d::3], expected, atol=1e-12)
    np.testing.assert_allclose(a[2::3, :], 0.0, atol=1e-15)


def test_flat_patch_divergence_form(flat_context):
    """b(phi_a e_c, xi_i) = sum over triangles of |T| / 3 * d_c xi_i."""
    velocity = VectorSpace(flat_context.surface, 1)
    pressure = ScalarSpace(flat_context.surface, 1)
    b = assemble_b(flat_context, velocity, pressure).toarray()
    expected = np.zeros((4, 12))
    for grads in SQUARE_GRADIENTS:
        for i, gi in grads.items():
            for a in grads:
                expected[i, 3 * a:3 * a + 2] += np.array(gi) / 6.0
    np.testing.assert_allclose(b, expected, atol=1e-12)


def test_reconstruction_loads_vanish_for_constant_stream(sphere_context, sphere_surface2):
    stream = ScalarSpace(sphere_surface2, 3)
    psi = np.full(stream.dim, 2.5)
    velocity = load_velocity_reconstruction(sphere_context, VectorSpace(sphere_surface2, 2), stream, psi)
    pressure = load_pressure_reconstruction(sphere_context, ScalarSpace(sphere_surface2, 2), stream, psi, None)
    assert np.max(np.abs(velocity)) < 1e-12
    assert np.max(np.abs(pressure)) < 1e-12


def test_reconstruction_loads_on_flat_patch(flat_context):
    """psi = x in the plane z = 0 has curl e_z x e_x = e_y."""
    stream = ScalarSpace(flat_context.surface, 1)
    psi = interpolate(stream, lambda p: p[:, 0])
    velocity = load_velocity_reconstruction(flat_context, VectorSpace(flat_context.surface, 1), stream, psi)
    np.testing.assert_allclose(velocity[1::3], [1 / 6, 1 / 3, 1 / 3, 1 / 6], atol=1e-12)
    np.testing.assert_allclose(velocity[0::3], 0.0, atol=1e-15)
    np.testing.assert_allclose(velocity[2::3], 0.0, atol=1e-15)

    pressure = ScalarSpace(flat_context.surface, 1)
    # K~ = 0 on the plane: only f . grad xi remains
    assert np.max(np.abs(load_pressure_reconstruction(flat_context, pressure, stream, psi, None))) < 1e-15
    load = load_pressure_reconstruction(flat_context, pressure, stream, psi, lambda p: np.tile([1.0, 0.0, 0.0],
                                                                                               (len(p), 1)))
    np.testing.assert_allclose(load, [-0.5, 0.5, -0.5, 0.5], atol=1e-12)


def test_reconstruction_loads_against_sphere_integrals(sphere_surface3):
    """psi = z on the unit sphere has curl (y, -x, 0); tested against closed-form surface integrals.

    int (y, -x, 0) . (y, -x, 0) = int x^2 + y^2 = 8 pi / 3, and with f = e_z the
    pressure load tested with q = z gives int e_z . grad z = int 2 z^2 = 8 pi / 3,
    the divergence-free curl part integrating to zero.
    """
    ctx = AssemblyContext(sphere_surface3, threads=1)
    stream = ScalarSpace(sphere_surface3, 4)
    psi = interpolate(stream, lambda p: p[:, 2])

    velocity = VectorSpace(sphere_surface3, 3)
    rotation = interpolate(velocity, lambda p: np.column_stack([p[:, 1], -p[:, 0], np.zeros(len(p))]))
    load = load_velocity_reconstruction(ctx, velocity, stream, psi)
    assert load @ rotation == pytest.approx(8.0 * np.pi / 3.0, rel=2e-2)

    pressure = ScalarSpace(sphere_surface3, 3)
    height = interpolate(pressure, lambda p: p[:, 2])
    lift = load_pressure_reconstruction(ctx, pressure, stream, psi, lambda p: np.tile([0.0, 0.0, 1.0], (len(p), 1)))
    assert lift @ height == pytest.approx(8.0 * np.pi / 3.0, rel=2e-2)
    curl_only = load_pressure_reconstruction(ctx, pressure, stream, psi, None)
    assert abs(curl_only @ height) < 2e-2


@pytest.mark.parametrize("k", [2, 3])
def test_curvature_stiffness_vanishes_on_unit_sphere(unit_sphere, k):
    """K = 1, so 2 int (1 - K~_h) grad xi . grad eta tends to zero with order k."""
    hs, sizes = [], []
    for level in range(3):
        surface = build_curved(build_base_mesh(unit_sphere, level, base_level=1), unit_sphere, k)
        matrix = assemble_stiffness_K(AssemblyContext(surface, threads=1), ScalarSpace(surface, k))
        hs.append(longest_edge(surface))
        sizes.append(abs(matrix).max())
    _, slope = eoc(hs, sizes)
    assert slope >= k - 0.3
    assert sizes[-1] < sizes[0]
