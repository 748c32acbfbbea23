import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from src.core.errors import EmptySurfaceError, GeometryDomainError, NonConvergenceError, SignAmbiguityError
from src.core.shape_space import (
    Codebook,
    TriMesh,
    TsdfGrid,
    box_mesh,
    class_medians,
    geodesic_angle,
    geometric_objective,
    hausdorff_distance,
    icosphere,
    latent_to_tsdf,
    marching_cubes,
    mesh_to_tsdf,
    normalize_latent,
    remove_degenerate_triangles,
    sample_surface,
    shape_loss,
    slerp,
    sphere_tsdf,
    total_variation,
    tsdf_ae_loss,
    weiszfeld_iterates,
    weiszfeld_median,
)


def _unit(rng, dim=6):
    return normalize_latent(rng.normal(size=dim))


def _tiny_grid(fill=0.1):
    return TsdfGrid(np.full((4, 4, 4), fill), 0.1, np.zeros(3), 0.3)


# =========================================================
# Latent hypersphere
# =========================================================

def test_normalize_latent():
    np.testing.assert_allclose(normalize_latent([3.0, 4.0]), [0.6, 0.8])
    with pytest.raises(GeometryDomainError):
        normalize_latent([0.0, 0.0, 0.0])


def test_shape_loss_properties(rng):
    s, t = _unit(rng), _unit(rng)
    assert shape_loss(s, s) == 0.0
    assert shape_loss(s, -s) == pytest.approx(0.0, abs=1e-12)
    assert shape_loss(s, t) == pytest.approx(shape_loss(t, s))
    assert 0.0 <= shape_loss(s, t) <= math.pi
    e0, e1 = np.eye(6)[0], np.eye(6)[1]
    assert shape_loss(e0, e1) == pytest.approx(math.pi)


def test_shape_loss_matches_closed_form(rng):
    for _ in range(20):
        s, t = _unit(rng), _unit(rng)
        expected = math.acos(np.clip(2.0 * float(s @ t) ** 2 - 1.0, -1.0, 1.0))
        assert shape_loss(s, t) == pytest.approx(expected, abs=1e-7)


def test_slerp_stays_on_sphere_and_moves_linearly_in_angle(rng):
    a, b = _unit(rng), _unit(rng)
    theta = geodesic_angle(a, b)
    for t in np.linspace(0.0, 1.0, 11):
        p = slerp(a, b, t)
        assert np.linalg.norm(p) == pytest.approx(1.0)
        assert geodesic_angle(a, p) == pytest.approx(t * theta, abs=1e-9)


def test_slerp_endpoints_are_exact(rng):
    a, b = rng.normal(size=6), rng.normal(size=6)
    np.testing.assert_array_equal(slerp(a, b, 0.0), normalize_latent(a))
    np.testing.assert_array_equal(slerp(a, b, 1.0), normalize_latent(b))


def test_slerp_is_reversible(rng):
    a, b = _unit(rng), _unit(rng)
    for t in (0.2, 0.5, 0.9):
        np.testing.assert_allclose(slerp(a, b, t), slerp(b, a, 1.0 - t), atol=1e-12)


def test_slerp_domain_errors(rng):
    a = _unit(rng)
    with pytest.raises(GeometryDomainError):
        slerp(a, -a, 0.5)
    with pytest.raises(GeometryDomainError):
        slerp(a, _unit(rng), 1.5)


# =========================================================
# Geometric median
# =========================================================

def test_weiszfeld_beats_direct_minimisation(rng):
    points = rng.normal(size=(9, 3)) * [1.0, 2.0, 0.5]
    median = weiszfeld_median(points)
    oracle = minimize(lambda y: geometric_objective(points, y), points.mean(axis=0), method="Nelder-Mead",
                      options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20_000})
    assert geometric_objective(points, median) <= oracle.fun + 1e-8


def test_weiszfeld_median_at_repeated_point():
    points = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(weiszfeld_median(points), [0.0, 0.0], atol=1e-6)


def test_weiszfeld_single_point():
    np.testing.assert_allclose(weiszfeld_median([[1.0, 2.0, 3.0]]), [1.0, 2.0, 3.0])


def test_weiszfeld_reports_non_convergence(rng):
    with pytest.raises(NonConvergenceError) as exc:
        weiszfeld_median(rng.normal(size=(6, 2)), max_iter=1)
    assert exc.value.last_iterate is not None


def test_weiszfeld_rejects_empty_input():
    with pytest.raises(GeometryDomainError):
        weiszfeld_median(np.zeros((0, 3)))


def test_weiszfeld_equilateral_triangle_gives_centroid():
    angles = np.deg2rad([90.0, 210.0, 330.0])
    points = np.column_stack([np.cos(angles), np.sin(angles)]) + [2.0, -1.0]
    np.testing.assert_allclose(weiszfeld_median(points), [2.0, -1.0], atol=1e-9)


def test_weiszfeld_collinear_points_pick_the_middle_one():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]])
    np.testing.assert_allclose(weiszfeld_median(points), [1.0, 0.0], atol=1e-6)


def test_weiszfeld_matches_grid_search(rng):
    points = rng.uniform(-1.0, 1.0, size=(7, 2))
    median = weiszfeld_median(points)
    axis = np.linspace(-1.0, 1.0, 401)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    costs = np.linalg.norm(grid[:, None, :] - points[None, :, :], axis=2).sum(axis=1)
    best = grid[np.argmin(costs)]
    assert geometric_objective(points, median) <= costs.min() + 1e-12
    np.testing.assert_allclose(median, best, atol=0.02)


def test_weiszfeld_objective_never_increases(rng):
    points = rng.normal(size=(12, 4))
    costs = [geometric_objective(points, y) for y in itertools.islice(weiszfeld_iterates(points), 300)]
    assert len(costs) > 2
    assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))


def test_spherical_median_is_unit(rng):
    points = np.array([_unit(rng) for _ in range(7)])
    assert np.linalg.norm(weiszfeld_median(points, on_sphere=True)) == pytest.approx(1.0)


# =========================================================
# Marching cubes
# =========================================================

def test_marching_cubes_on_sphere():
    grid = sphere_tsdf(1.03, (32, 32, 32), 0.1)
    mesh = marching_cubes(grid)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 1.03).max() < grid.voxel_size
    assert mesh.signed_volume == pytest.approx(4.0 / 3.0 * math.pi * 1.03**3, rel=0.03)


def test_marching_cubes_recovers_a_plane():
    c = 0.33
    axes = [np.arange(8) * 0.1] * 3
    X, _, _ = np.meshgrid(*axes, indexing="ij")
    grid = TsdfGrid(np.clip(X - c, -0.3, 0.3), 0.1, np.zeros(3), 0.3)
    mesh = marching_cubes(grid)
    np.testing.assert_allclose(mesh.vertices[:, 0], c, atol=1e-9)
    # normals toward positive values, i.e. +x
    assert np.all(mesh.vertex_normals()[:, 0] > 0.99)


def test_single_sign_grid_has_no_surface():
    with pytest.raises(EmptySurfaceError):
        marching_cubes(_tiny_grid(0.1))
    with pytest.raises(EmptySurfaceError):
        marching_cubes(_tiny_grid(-0.1))


def test_sign_flip_keeps_vertices_and_reverses_orientation():
    grid = sphere_tsdf(0.77, (24, 24, 24), 0.1)
    outward = marching_cubes(grid)
    inward = marching_cubes(grid.flipped())
    np.testing.assert_allclose(inward.vertices, outward.vertices, atol=1e-12)
    assert outward.signed_volume > 0
    assert inward.signed_volume == pytest.approx(-outward.signed_volume, rel=1e-2)


def test_degenerate_triangles_removed():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [5, 5, 5]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 1, 3], [1, 1, 2]])
    cleaned = remove_degenerate_triangles(TriMesh(verts, tris))
    assert len(cleaned.triangles) == 1
    assert len(cleaned.vertices) == 3


# =========================================================
# Mesh -> TSDF
# =========================================================

def _round_trip_error(mesh, dims, rng):
    grid = mesh_to_tsdf(mesh, dims)
    back = marching_cubes(grid)
    a = np.vstack([sample_surface(mesh, 4000, rng), mesh.vertices])
    b = np.vstack([sample_surface(back, 4000, rng), back.vertices])
    return hausdorff_distance(a, b), grid


@pytest.mark.parametrize("mesh", [icosphere(3, 1.0), box_mesh(1.6, 1.5, 3.9)], ids=["sphere", "box"])
def test_mesh_tsdf_round_trip(mesh, rng):
    error, grid = _round_trip_error(mesh, (32, 32, 32), rng)
    assert error < 2.0 * grid.voxel_diagonal


@pytest.mark.slow
@pytest.mark.parametrize("mesh", [icosphere(4, 1.0), box_mesh(1.6, 1.5, 3.9)], ids=["sphere", "box"])
def test_mesh_tsdf_round_trip_full_resolution(mesh, rng):
    error, grid = _round_trip_error(mesh, (128, 128, 128), rng)
    assert error < 2.0 * grid.voxel_diagonal


def test_mesh_tsdf_is_negative_inside():
    grid = mesh_to_tsdf(box_mesh(1.0, 1.0, 1.0), (20, 20, 20))
    assert grid.values[10, 10, 10] == pytest.approx(-grid.truncation)
    assert grid.values[0, 0, 0] == pytest.approx(grid.truncation)
    assert grid.truncation == pytest.approx(3.0 * grid.voxel_size)


def test_mesh_tsdf_matches_sphere_distance():
    tau = 0.15
    grid = mesh_to_tsdf(icosphere(4, 1.0), (48, 48, 48), voxel_size=0.05, truncation=tau)
    X, Y, Z = np.meshgrid(*grid.node_axes(), indexing="ij")
    expected = np.clip(np.sqrt(X**2 + Y**2 + Z**2) - 1.0, -tau, tau)
    np.testing.assert_allclose(grid.values, expected, atol=0.01)
    assert grid.values[24, 24, 24] == -tau
    assert grid.values[0, 0, 0] == tau


def test_open_mesh_has_ambiguous_sign():
    box = box_mesh(1.0, 1.0, 1.0)
    keep = ~np.all(np.isclose(box.vertices[box.triangles][:, :, 0], 0.5), axis=1)
    open_box = TriMesh(box.vertices, box.triangles[keep])
    with pytest.raises(SignAmbiguityError) as err:
        mesh_to_tsdf(open_box, (16, 16, 16), voxel_size=0.1, origin=(-0.75, -0.75, -0.75))

    # columns through the missing x = +0.5 face cross the surface once
    rays = set(err.value.rays)
    assert (7, 7) in rays
    assert (0, 0) not in rays
    for j, k in rays:
        assert abs(-0.75 + 0.1 * j) < 0.5 and abs(-0.75 + 0.1 * k) < 0.5


def test_mesh_tsdf_rejects_tiny_grid():
    with pytest.raises(GeometryDomainError):
        mesh_to_tsdf(box_mesh(1.0, 1.0, 1.0), (8, 8, 8))


# =========================================================
# Autoencoder loss
# =========================================================

def _tv_oracle(v):
    nx, ny, nz = v.shape
    total = 0.0
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        if i + 1 < nx:
            total += abs(v[i + 1, j, k] - v[i, j, k])
        if j + 1 < ny:
            total += abs(v[i, j + 1, k] - v[i, j, k])
        if k + 1 < nz:
            total += abs(v[i, j, k + 1] - v[i, j, k])
    return total / v.size


def test_tsdf_ae_loss_matches_elementwise_oracle(rng):
    rec = rng.uniform(-0.3, 0.3, size=(5, 4, 6))
    tgt = rng.uniform(-0.3, 0.3, size=(5, 4, 6))
    latent = [0.3, 0.4, 1.2]
    loss = tsdf_ae_loss(rec, latent, tgt)
    assert loss.reconstruction == pytest.approx(np.abs(rec - tgt).sum() / rec.size)
    assert loss.latent_norm == pytest.approx(0.3)
    assert loss.total_variation == pytest.approx(_tv_oracle(rec))
    assert loss.total == pytest.approx(loss.reconstruction + loss.latent_norm + loss.total_variation)


def test_tsdf_ae_loss_zero_on_perfect_constant_reconstruction():
    grid = _tiny_grid(0.2)
    loss = tsdf_ae_loss(grid, [0.6, 0.8], grid)
    assert loss.total == pytest.approx(0.0, abs=1e-15)
    assert total_variation(grid.values) == 0.0


def test_tsdf_ae_loss_rejects_shape_mismatch():
    with pytest.raises(GeometryDomainError):
        tsdf_ae_loss(np.zeros((2, 2, 2)), [1.0], np.zeros((2, 2, 3)))


def test_tsdf_grid_validation():
    with pytest.raises(GeometryDomainError):
        TsdfGrid(np.zeros((4, 4)), 0.1, np.zeros(3), 0.3)
    with pytest.raises(GeometryDomainError):
        TsdfGrid(np.full((2, 2, 2), 0.5), 0.1, np.zeros(3), 0.3)
    with pytest.raises(GeometryDomainError):
        TsdfGrid(np.zeros((2, 2, 2)), 0.0, np.zeros(3), 0.3)


# =========================================================
# Codebook
# =========================================================

def _book():
    book = Codebook()
    book.add("a", [1, 0, 0, 0, 0, 0], "Car", _tiny_grid(0.1))
    book.add("b", [0, 1, 0, 0, 0, 0], "SUV", _tiny_grid(-0.1))
    book.add("c", [0, 0, 2, 0, 0, 0], "Car", _tiny_grid(0.2))
    return book


def test_codebook_nearest_entry():
    book = _book()
    assert len(book) == 3 and book.dim == 6
    assert book.nearest_index([0.1, 0.9, 0, 0, 0, 0]) == 1
    assert latent_to_tsdf([0.9, 0.1, 0, 0, 0, 0], book).values[0, 0, 0] == pytest.approx(0.1)


def test_codebook_tie_goes_to_lower_index():
    book = _book()
    assert book.nearest_index([1, 1, 0, 0, 0, 0]) == 0


def test_codebook_validation():
    book = _book()
    with pytest.raises(GeometryDomainError):
        book.add("d", [1, 0, 0], "Car", _tiny_grid())
    with pytest.raises(GeometryDomainError):
        book.add("d", [1, 0, 0, 0, 0, 0], "Bus", _tiny_grid())
    with pytest.raises(GeometryDomainError):
        Codebook().nearest_index([1.0])


def test_codebook_save_load(tmp_path):
    book = _book()
    book.save(tmp_path / "book")
    loaded = Codebook.load(tmp_path / "book")
    assert [e.id for e in loaded.entries] == ["a", "b", "c"]
    np.testing.assert_allclose(loaded.latents(), book.latents())
    np.testing.assert_allclose(loaded.entries[2].grid.values, book.entries[2].grid.values, atol=1e-7)
    assert loaded.entries[1].class_tag == "SUV"


def test_class_medians():
    medians = class_medians(_book())
    assert set(medians) == {"Car", "SUV", "all"}
    np.testing.assert_allclose(medians["SUV"], [0, 1, 0, 0, 0, 0], atol=1e-9)
    for m in medians.values():
        assert np.linalg.norm(m) == pytest.approx(1.0)


def test_class_medians_unknown_tag():
    with pytest.raises(GeometryDomainError):
        class_medians(_book(), ["Tractor"])
