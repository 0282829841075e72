"""Mesh, blendshape projection, Laplacian, layout, and mounting frames."""

import numpy as np
import pytest

from trava import diffcore as dc
from trava import geometry as geo
from trava.diffcore import ops


@pytest.fixture(scope="module")
def sphere():
    return geo.make_template_sphere()


@pytest.fixture(scope="module")
def basis(sphere):
    return geo.build_blendshape_basis(sphere, n_shapes=51, seed=0)


def _quad_mesh():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64)
    uv = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
    tri = np.array([[0, 1, 2], [0, 2, 3]])
    return geo.TemplateMesh(v, tri, uv, np.ones(4))


# ---------------------------------------------------------------------------
# template mesh

def test_sphere_vertex_count_and_validity(sphere):
    assert sphere.n_vertices == 1026
    assert np.allclose(np.linalg.norm(sphere.vertices, axis=1), 0.11)
    assert sphere.triangles.shape[1] == 3
    # Full-scale variant hits the published vertex count.
    big = geo.make_template_sphere(n_lon=87, n_lat=84)
    assert big.n_vertices == 7306


def test_weight_mask_two_levels(sphere):
    levels = set(np.unique(sphere.weight_mask))
    assert levels == {0.1, 1.0}
    assert (sphere.weight_mask == 1.0).any()


def test_mesh_rejects_isolated_vertices():
    v = np.zeros((4, 3))
    v[:3] = np.eye(3)
    with pytest.raises(ValueError):
        geo.TemplateMesh(v, np.array([[0, 1, 2]]), np.zeros((4, 2)), np.ones(4))


def test_obj_roundtrip(tmp_path, sphere):
    p = tmp_path / "mesh.obj"
    geo.save_obj(p, sphere)
    back = geo.load_obj(p)
    assert back.n_vertices == sphere.n_vertices
    np.testing.assert_allclose(back.vertices, sphere.vertices, atol=1e-7)
    np.testing.assert_allclose(back.uv, sphere.uv, atol=1e-7)
    np.testing.assert_array_equal(back.triangles, sphere.triangles)


def test_obj_face_variants(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\n"
                 "f 1/1 2/2 3/3\nf 1//1 2//2 3//3\n")
    mesh = geo.load_obj(p)
    assert mesh.n_faces == 2
    np.testing.assert_allclose(mesh.uv, [[0, 0], [1, 0], [0, 1]])


# ---------------------------------------------------------------------------
# blendshapes

def test_basis_rank_enforced(sphere, basis):
    assert basis.n_shapes == 51
    bad = basis.basis.copy()
    bad[3] = bad[5]
    with pytest.raises(ValueError, match="rank"):
        geo.BlendshapeBasis(bad)


def test_projection_fixes_span_elements(basis):
    row = basis.basis[7]
    np.testing.assert_allclose(basis.project(row), row, rtol=1e-9, atol=1e-12)


def test_projection_kills_orthogonal_complement(basis):
    rng = np.random.default_rng(0)
    v = rng.normal(size=basis.n_coords)
    # Remove the span component; what is left must project to ~0.
    v_perp = v - basis.project(v)
    out = basis.project(v_perp)
    assert np.linalg.norm(out) < 1e-8 * max(np.linalg.norm(v_perp), 1.0)


def test_projection_matches_lstsq_oracle(basis):
    rng = np.random.default_rng(1)
    v = rng.normal(size=basis.n_coords)
    coeff, *_ = np.linalg.lstsq(basis.basis.T, v, rcond=None)
    ref = basis.basis.T @ coeff
    got = basis.project(v)
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-6
    np.testing.assert_allclose(basis.coefficients(v), coeff, atol=1e-8)


def test_projection_idempotent(basis):
    rng = np.random.default_rng(2)
    v = rng.normal(size=basis.n_coords)
    once = basis.project(v)
    twice = basis.project(once)
    assert np.linalg.norm(twice - once) / np.linalg.norm(once) < 1e-6


def test_projection_differentiable(sphere, basis):
    v = dc.Tensor(sphere.vertices.copy(), requires_grad=True)
    out = basis.project(v)
    dc.backward(out.sum())
    assert v.grad is not None and v.grad.shape == v.shape


# ---------------------------------------------------------------------------
# Laplacian

def test_laplacian_structure(sphere):
    lap = geo.build_laplacian(sphere)
    dense = lap.toarray()
    np.testing.assert_allclose(dense.sum(axis=1), 0.0, atol=1e-12)
    assert np.array_equal(dense != 0, dense.T != 0)
    off = dense - np.diag(np.diag(dense))
    assert set(np.unique(off)) <= {0.0, -1.0}


def test_laplacian_loss_zero_cases(sphere, basis):
    lap = geo.build_laplacian(sphere)
    v = sphere.vertices + 0.01
    assert geo.laplacian_loss(v, v, lap, sphere.weight_mask) == 0.0
    # A constant translation lives in the Laplacian's null space.
    v_base = sphere.vertices
    shifted = v_base + np.array([0.3, -0.2, 0.5])
    loss = geo.laplacian_loss(shifted, v_base, lap, sphere.weight_mask)
    assert abs(loss) < 1e-18


def test_laplacian_loss_matches_oracle(sphere):
    lap = geo.build_laplacian(sphere)
    rng = np.random.default_rng(3)
    v = rng.normal(size=(sphere.n_vertices, 3))
    vb = rng.normal(size=(sphere.n_vertices, 3))
    got = geo.laplacian_loss(v, vb, lap, sphere.weight_mask)
    dense = lap.toarray()
    ld = dense @ (v - vb)
    ref = float((sphere.weight_mask[:, None] * ld * ld).sum())
    assert abs(got - ref) / abs(ref) < 1e-9


def test_laplacian_loss_invariant_to_span_shift(sphere, basis):
    lap = geo.build_laplacian(sphere)
    rng = np.random.default_rng(4)
    v = dc.Tensor(rng.normal(size=(sphere.n_vertices, 3)))
    a = rng.normal(size=51) * 0.1
    shift = (basis.basis.T @ a).reshape(-1, 3)
    base1 = basis.project(v.data)
    loss1 = geo.laplacian_loss(v.data, base1, lap, sphere.weight_mask)
    v2 = v.data + shift
    base2 = basis.project(v2)
    loss2 = geo.laplacian_loss(v2, base2, lap, sphere.weight_mask)
    assert abs(loss1 - loss2) / max(abs(loss1), 1e-12) < 1e-5


def test_laplacian_loss_gradient_fd(sphere):
    lap = geo.build_laplacian(sphere)
    rng = np.random.default_rng(5)
    v = dc.Tensor(rng.normal(size=(sphere.n_vertices, 3)), requires_grad=True)
    vb = rng.normal(size=(sphere.n_vertices, 3))
    loss = geo.laplacian_loss(v, vb, lap, sphere.weight_mask)
    dc.backward(loss)
    h = 1e-6
    for (i, j) in [(0, 0), (100, 1), (1025, 2)]:
        orig = v.data[i, j]
        v.data[i, j] = orig + h
        fp = geo.laplacian_loss(v.data, vb, lap, sphere.weight_mask)
        v.data[i, j] = orig - h
        fm = geo.laplacian_loss(v.data, vb, lap, sphere.weight_mask)
        v.data[i, j] = orig
        num = (fp - fm) / (2 * h)
        assert abs(num - v.grad[i, j]) / max(abs(num), 1e-8) < 1e-4


# ---------------------------------------------------------------------------
# layout

def test_layout_tiles_without_overlap(sphere):
    layout = geo.build_layout(sphere, n_prim=256, m=8)
    assert layout.n_primitives == 256 and layout.grid_dim == 16
    # Cell centers are the exact 16x16 lattice; footprints are disjoint.
    expect = np.stack(np.meshgrid((np.arange(16) + 0.5) / 16,
                                  (np.arange(16) + 0.5) / 16,
                                  indexing="xy"), axis=-1).reshape(-1, 2)
    np.testing.assert_allclose(layout.uv_center, expect)
    assert layout.uv_size == pytest.approx(1 / 16)
    assert np.all(layout.bary >= 0) and np.allclose(layout.bary.sum(axis=1), 1.0)
    assert np.all(layout.face_index >= 0)
    assert np.all(layout.face_index < sphere.n_faces)


def test_layout_anchor_uv_matches_cell_center(sphere):
    layout = geo.build_layout(sphere, n_prim=256, m=8)
    from trava.geometry.layout import face_uvs
    fuv = face_uvs(sphere)
    ok = np.setdiff1d(np.arange(256), layout.snapped)
    assert ok.size > 200  # almost all cells anchor exactly
    rec = np.einsum("pk,pkc->pc", layout.bary[ok], fuv[layout.face_index[ok]])
    assert np.abs(rec - layout.uv_center[ok]).max() < 1e-6


def test_layout_nonsquare_counts(sphere):
    # Non-square counts take a raster-order prefix of the next square grid.
    lay = geo.build_layout(sphere, n_prim=2, m=4)
    full = geo.build_layout(sphere, n_prim=4, m=4)
    assert lay.n_primitives == 2
    np.testing.assert_array_equal(lay.uv_center, full.uv_center[:2])
    np.testing.assert_array_equal(lay.face_index, full.face_index[:2])
    with pytest.raises(ValueError, match="positive"):
        geo.build_layout(sphere, n_prim=0)


# ---------------------------------------------------------------------------
# frames

def test_flat_quad_frames_axis_aligned():
    mesh = _quad_mesh()
    layout = geo.build_layout(mesh, n_prim=4, m=4)
    frames = geo.mount_frames(mesh.vertices, mesh, layout)
    r = frames.rotation.data
    for p in range(4):
        np.testing.assert_allclose(r[p], np.eye(3), atol=1e-9)
    assert frames.degenerate.size == 0
    np.testing.assert_allclose(frames.origin.data[:, 2], 0.0, atol=1e-12)


def test_frames_orthonormal_on_random_deformation(sphere):
    layout = geo.build_layout(sphere, n_prim=64, m=8)
    rng = np.random.default_rng(6)
    v = sphere.vertices + 0.01 * rng.normal(size=sphere.vertices.shape)
    frames = geo.mount_frames(v, sphere, layout)
    r = frames.rotation.data
    rtr = np.einsum("pij,pik->pjk", r, r)
    np.testing.assert_allclose(rtr, np.broadcast_to(np.eye(3), rtr.shape), atol=1e-6)
    dets = np.linalg.det(r)
    np.testing.assert_allclose(dets, 1.0, atol=1e-5)
    assert np.all(frames.scale.data > 0)


def test_frames_equivariant_under_rigid_rotation(sphere):
    layout = geo.build_layout(sphere, n_prim=64, m=8)
    rng = np.random.default_rng(7)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    f0 = geo.mount_frames(sphere.vertices, sphere, layout)
    f1 = geo.mount_frames(sphere.vertices @ rot.T, sphere, layout)
    np.testing.assert_allclose(f1.rotation.data, rot @ f0.rotation.data, atol=1e-9)
    np.testing.assert_allclose(f1.origin.data, f0.origin.data @ rot.T, atol=1e-12)
    np.testing.assert_allclose(f1.scale.data, f0.scale.data, atol=1e-12)


def test_degenerate_face_falls_back_and_flags():
    mesh = _quad_mesh()
    v = mesh.vertices.copy()
    v[3] = v[2]  # collapse the second triangle
    layout = geo.build_layout(mesh, n_prim=4, m=4)
    if not np.any(layout.face_index == 1):
        pytest.skip("no primitive anchored on the collapsed face")
    frames = geo.mount_frames(v, mesh, layout)
    assert frames.degenerate.size > 0
    # Fallback normal comes from the healthy neighbor: +z.
    for p in frames.degenerate:
        np.testing.assert_allclose(frames.rotation.data[p][:, 2], [0, 0, 1], atol=1e-9)


def test_frames_gradient_flows_to_vertices(sphere):
    layout = geo.build_layout(sphere, n_prim=16, m=4)
    v = dc.Tensor(sphere.vertices.copy(), requires_grad=True)
    frames = geo.mount_frames(v, sphere, layout)
    total = ops.add(ops.add(frames.origin.sum(), frames.rotation.sum()),
                    frames.scale.sum())
    dc.backward(total)
    assert v.grad is not None
    assert np.isfinite(v.grad).all()
    assert np.abs(v.grad).max() > 0


def test_frames_gradient_matches_fd(sphere):
    layout = geo.build_layout(sphere, n_prim=16, m=4)
    rng = np.random.default_rng(8)
    coeff_o = rng.normal(size=(16, 3))
    coeff_r = rng.normal(size=(16, 3, 3))
    coeff_s = rng.normal(size=(16, 3))

    def objective(vt):
        frames = geo.mount_frames(vt, sphere, layout)
        parts = [ops.mul(frames.origin, dc.Tensor(coeff_o.astype(vt.data.dtype))),
                 ops.mul(frames.rotation, dc.Tensor(coeff_r.astype(vt.data.dtype))),
                 ops.mul(frames.scale, dc.Tensor(coeff_s.astype(vt.data.dtype)))]
        return ops.add(ops.add(parts[0].sum(), parts[1].sum()), parts[2].sum())

    v = dc.Tensor(sphere.vertices.copy(), requires_grad=True)
    dc.backward(objective(v))
    h = 1e-6
    touched = np.unique(sphere.triangles[layout.face_index].ravel())
    for idx in touched[:4]:
        for j in range(3):
            orig = v.data[idx, j]
            v.data[idx, j] = orig + h
            fp = objective(dc.Tensor(v.data)).item()
            v.data[idx, j] = orig - h
            fm = objective(dc.Tensor(v.data)).item()
            v.data[idx, j] = orig
            num = (fp - fm) / (2 * h)
            ana = v.grad[idx, j]
            assert abs(num - ana) / max(abs(num), abs(ana), 1e-6) < 1e-4, (idx, j)


# ---------------------------------------------------------------------------
# rigid pose

def test_apply_rigid_identity(sphere):
    out = geo.apply_rigid(sphere.vertices, np.zeros_like(sphere.vertices),
                          np.eye(3), np.zeros(3))
    np.testing.assert_allclose(out.data, sphere.vertices, atol=0)


def test_apply_rigid_translation(sphere):
    t = np.array([0.1, -0.2, 0.3])
    out = geo.apply_rigid(sphere.vertices, np.zeros_like(sphere.vertices),
                          np.eye(3), t)
    np.testing.assert_allclose(out.data, sphere.vertices + t, atol=1e-12)


def test_apply_rigid_matches_pointwise_oracle(sphere):
    rng = np.random.default_rng(9)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    delta = rng.normal(size=sphere.vertices.shape) * 0.01
    t = rng.normal(size=3)
    out = geo.apply_rigid(sphere.vertices, delta, rot, t).data
    for i in [0, 17, 500, 1025]:
        ref = rot @ (sphere.vertices[i] + delta[i]) + t
        np.testing.assert_allclose(out[i], ref, atol=1e-12)


def test_apply_rigid_gradient_to_pose(sphere):
    r = dc.Tensor(np.eye(3), requires_grad=True)
    t = dc.Tensor(np.zeros(3), requires_grad=True)
    out = geo.apply_rigid(sphere.vertices[:10], np.zeros((10, 3)), r, t)
    dc.backward(out.sum())
    assert t.grad is not None and np.allclose(t.grad, 10.0)
    assert r.grad is not None and r.grad.shape == (3, 3)
