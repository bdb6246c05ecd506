import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from westervelt_mh.mesh import (DiskShape, HalfPlaneShape, Mesh, MeshError, MeshParseError,
                                generate_disk_mesh, generate_rect_mesh, locate_point, read_mesh,
                                tag_region, validate, write_mesh)


def interior_edge_multiplicity(mesh):
    e = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def check_invariants(mesh):
    assert np.all(mesh.signed_areas > 0)
    counts = interior_edge_multiplicity(mesh)
    assert set(counts.tolist()) <= {1, 2}
    assert np.sum(counts == 1) == len(mesh.boundary)
    # outward normals, unit length
    mid = mesh.vertices[mesh.boundary].mean(axis=1)
    cen = mesh.centroids[mesh.boundary_owner]
    assert np.all(np.sum(mesh.normals * (mid - cen), axis=1) > 0)
    np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-12)
    # closed loops: every boundary vertex starts exactly one edge and ends exactly one
    a, b = np.bincount(mesh.boundary[:, 0], minlength=mesh.n_vertices), \
        np.bincount(mesh.boundary[:, 1], minlength=mesh.n_vertices)
    assert np.array_equal(a, b)
    assert set(a.tolist()) <= {0, 1}
    e = mesh.edges
    assert mesh.h_max == pytest.approx(np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1).max())


class TestDisk:
    def test_coarse_disk(self):
        mesh = generate_disk_mesh(0.2, (0, 0), 0.1)
        check_invariants(mesh)
        assert mesh.h_max <= 0.15

    def test_normal_at_east_vertex(self):
        mesh = generate_disk_mesh(1.0, (0, 0), 0.5)
        bv = mesh.boundary_vertices
        v = bv[np.argmin(np.linalg.norm(mesh.vertices[bv] - [1.0, 0.0], axis=1))]
        np.testing.assert_allclose(mesh.vertex_normal(v), [1.0, 0.0], atol=1e-6)

    def test_vertex_count_estimate(self):
        mesh = generate_disk_mesh(0.2, (0, 0), 0.0005)
        est = math.pi * 0.2 ** 2 / (0.5 * 0.0005 ** 2 * math.sqrt(3))
        assert 0.5 * est <= mesh.n_vertices <= 2.0 * est
        assert mesh.h_max <= 1.5 * 0.0005

    @pytest.mark.parametrize("h", [0.05, 0.02, 0.01, 0.004])
    def test_invariants_and_area(self, h):
        mesh = generate_disk_mesh(0.2, (0.1, -0.3), h)
        check_invariants(mesh)
        assert mesh.h_max <= 1.5 * h
        assert abs(mesh.area - math.pi * 0.04) <= 2 * (2 * math.pi * 0.2) * mesh.h_max
        r = np.linalg.norm(mesh.vertices[mesh.boundary_vertices] - [0.1, -0.3], axis=1)
        np.testing.assert_allclose(r, 0.2, atol=1e-12 * 0.2)
        assert mesh.min_angle() > 20

    @pytest.mark.parametrize("args", [(-1, 0.1), (0.2, 0.0), (0.2, 0.3), (float("nan"), 0.01)])
    def test_rejects_bad_input(self, args):
        with pytest.raises(ValueError):
            generate_disk_mesh(args[0], (0, 0), args[1])

    def test_resource_error(self):
        with pytest.raises(MemoryError):
            generate_disk_mesh(1.0, (0, 0), 1e-6)


class TestRect:
    def test_smallest(self):
        mesh = generate_rect_mesh(0, 0, 1, 1, 1, 1)
        assert (mesh.n_triangles, mesh.n_vertices) == (2, 4)

    def test_two_by_two(self):
        mesh = generate_rect_mesh(0, 0, 1, 1, 2, 2)
        assert mesh.n_triangles == 8
        assert mesh.h_max == pytest.approx(math.sqrt(2) / 2, abs=1e-15)

    def test_area(self):
        mesh = generate_rect_mesh(0, 0, 2, 1, 4, 2)
        assert abs(mesh.area - 2) <= 1e-12
        check_invariants(mesh)

    @given(st.integers(1, 8), st.integers(1, 8))
    @settings(max_examples=25, deadline=None)
    def test_counts(self, nx, ny):
        mesh = generate_rect_mesh(-1, 0, 1, 3, nx, ny)
        assert mesh.n_triangles == 2 * nx * ny
        assert mesh.n_vertices == (nx + 1) * (ny + 1)
        assert abs(mesh.area - 6) <= 1e-12
        check_invariants(mesh)

    def test_degenerate_extent(self):
        with pytest.raises(ValueError):
            generate_rect_mesh(0, 0, 0, 1, 2, 2)
        with pytest.raises(ValueError):
            generate_rect_mesh(0, 0, 1, 1, 0, 2)


class TestTagging:
    def test_outside_and_full(self):
        mesh = generate_disk_mesh(0.2, (0, 0), 0.02)
        m2, n = tag_region(mesh, DiskShape((5.0, 5.0), 0.1), 3)
        assert n == 0 and np.all(m2.tags == mesh.tags)
        m3, n = tag_region(mesh, DiskShape((0.0, 0.0), 1.0), 3)
        assert n == mesh.n_triangles and np.all(m3.tags == 3)

    def test_area_of_tagged_disk(self):
        mesh = generate_disk_mesh(0.2, (0, 0), 0.002)
        tagged, n = tag_region(mesh, DiskShape((0.05, 0.07), 0.05), 2)
        area = tagged.areas[tagged.tags == 2].sum()
        assert n > 0
        assert abs(area - math.pi * 0.05 ** 2) <= 2 * (2 * math.pi * 0.05) * 0.002

    def test_half_plane(self):
        mesh = generate_rect_mesh(0, 0, 1, 1, 10, 10)
        tagged, n = tag_region(mesh, HalfPlaneShape((1.0, 0.0), 0.5), 1)
        assert tagged.areas[tagged.tags == 1].sum() == pytest.approx(0.5)
        assert n == 100


class TestLocate:
    def test_centroid_and_vertex(self, small_disk):
        for t in (0, 17, small_disk.n_triangles - 1):
            tri, lam = locate_point(small_disk, small_disk.centroids[t])
            assert tri == t
            np.testing.assert_allclose(lam, 1 / 3, atol=1e-12)
        tri, lam = locate_point(small_disk, small_disk.vertices[5])
        assert 5 in small_disk.triangles[tri]
        assert np.max(lam) == pytest.approx(1.0, abs=1e-12)

    def test_outside(self, small_disk):
        assert locate_point(small_disk, (1.0, 1.0)) is None

    @given(st.floats(-0.049, 0.049), st.floats(-0.049, 0.049))
    @settings(max_examples=60, deadline=None)
    def test_reproduces_point(self, small_disk, x, y):
        if math.hypot(x, y) > 0.0485:
            return
        tri, lam = locate_point(small_disk, (x, y))
        assert np.all(lam >= -1e-12) and np.all(lam <= 1 + 1e-12)
        assert lam.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(lam @ small_disk.vertices[small_disk.triangles[tri]], [x, y], atol=1e-10)


class TestIO:
    def test_round_trip(self, tmp_path):
        mesh, _ = tag_region(generate_disk_mesh(0.1, (0, 0), 0.02), DiskShape((0, 0), 0.05), 4)
        write_mesh(mesh, tmp_path / "m.mhmesh")
        back = read_mesh(tmp_path / "m.mhmesh")
        np.testing.assert_array_equal(back.vertices, mesh.vertices)
        np.testing.assert_array_equal(back.triangles, mesh.triangles)
        np.testing.assert_array_equal(back.tags, mesh.tags)
        np.testing.assert_array_equal(back.boundary, mesh.boundary)
        np.testing.assert_array_equal(back.boundary_owner, mesh.boundary_owner)
        np.testing.assert_allclose(back.normals, mesh.normals, atol=0)

    def test_clockwise_triangle_named(self, tmp_path):
        text = "mhmesh 1\nvertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 2 1 0\nboundary 3\n0 2 0 1\n2 1 0 1\n1 0 0 1\n"
        (tmp_path / "bad.mhmesh").write_text(text)
        with pytest.raises(MeshError, match="triangle 0"):
            read_mesh(tmp_path / "bad.mhmesh")

    def test_truncated(self, tmp_path):
        mesh = generate_rect_mesh(0, 0, 1, 1, 2, 2)
        write_mesh(mesh, tmp_path / "m.mhmesh")
        lines = (tmp_path / "m.mhmesh").read_text().splitlines()
        (tmp_path / "t.mhmesh").write_text("\n".join(lines[:12]) + "\n")
        with pytest.raises(MeshParseError) as err:
            read_mesh(tmp_path / "t.mhmesh")
        assert err.value.lineno >= 12
        assert "line" in str(err.value)

    def test_bad_header(self, tmp_path):
        (tmp_path / "h.mhmesh").write_text("notamesh\n")
        with pytest.raises(MeshParseError) as err:
            read_mesh(tmp_path / "h.mhmesh")
        assert err.value.lineno == 1


def test_nonconforming_rejected():
    # a hanging node: vertex 4 sits on edge (0,1) of the lower triangle
    v = np.array([[0, 0], [2, 0], [0, 2], [1, 0], [1, -1]], dtype=float)
    t = np.array([[0, 1, 2], [0, 4, 3], [3, 4, 1]])
    with pytest.raises(MeshError):
        validate(Mesh.from_triangles(v, t))


def test_mesh_is_immutable(small_disk):
    with pytest.raises(ValueError):
        small_disk.vertices[0, 0] = 1.0
