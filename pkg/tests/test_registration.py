import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from conftest import random_rotation
from facebench.errors import DataError, NumericalError
from facebench.mesh import LandmarkSet, Mesh
from facebench.registration import (IcpParams, SimilarityTransform, apply_transform, crop_mesh,
                                    fit_similarity, icp, rlr, run_icp)

IDS = (13, 19, 28, 31, 37)


def _lmks(p, ids=IDS):
    return LandmarkSet(p, ids)


def test_transform_invariants():
    with pytest.raises(NumericalError):
        SimilarityTransform(0.0)
    with pytest.raises(NumericalError):
        SimilarityTransform(1.0, np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(NumericalError):
        SimilarityTransform(1.0, 2 * np.eye(3))


def test_crop_extent():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(200, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    m, idx = crop_mesh(Mesh(v), np.zeros(3), 2.0)
    np.testing.assert_array_equal(m.vertices, v)
    np.testing.assert_array_equal(idx, np.arange(200))


def test_crop_two_points():
    v = np.array([[0.0, 0, 0], [10, 0, 0], [0, 1, 0], [1, 0, 0]])
    m, idx = crop_mesh(Mesh(v), np.zeros(3), 5.0)
    assert m.n_vertices == 3 and idx[1] == -1
    with pytest.raises(DataError):
        crop_mesh(Mesh(v), np.zeros(3), 0.5)


def test_crop_brute_force_and_idempotent(rng):
    v = rng.uniform(-50, 50, size=(1000, 3))
    c = rng.uniform(-10, 10, size=3)
    m, idx = crop_mesh(Mesh(v), c, 40.0)
    keep = [i for i in range(1000) if np.sqrt(((v[i] - c) ** 2).sum()) <= 40.0]
    np.testing.assert_array_equal(np.flatnonzero(idx >= 0), keep)
    np.testing.assert_array_equal(m.vertices, v[keep])
    kept = idx[idx >= 0]
    assert len(np.unique(kept)) == len(kept)
    m2, _ = crop_mesh(m, c, 40.0)
    np.testing.assert_array_equal(m2.vertices, m.vertices)


def test_crop_faces_kept_iff_all_vertices_survive(small_template):
    g = small_template.mesh
    c = g.vertices[small_template.landmark_indices[2]]
    m, idx = crop_mesh(g, c, 40.0)
    survive = (idx[g.faces] >= 0).all(1)
    assert len(m.faces) == survive.sum()
    np.testing.assert_array_equal(m.faces, idx[g.faces[survive]])


def test_rlr_identity(rng):
    p = rng.normal(size=(5, 3)) * 30
    t = rlr(_lmks(p), _lmks(p))
    assert abs(t.scale - 1) < 1e-9
    np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(t.translation, 0, atol=1e-9)


@given(st.integers(0, 2 ** 32 - 1))
def test_rlr_recovers_known_transform(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(5, 3)) * 40
    t0 = SimilarityTransform(rng.uniform(0.5, 2.0), random_rotation(rng), rng.normal(size=3) * 20)
    t = rlr(_lmks(p), _lmks(t0.apply(p)))
    assert abs(t.scale - t0.scale) < 1e-8
    np.testing.assert_allclose(t.rotation, t0.rotation, atol=1e-8)
    np.testing.assert_allclose(t.translation, t0.translation, atol=1e-8)


def test_rlr_matches_by_id(rng):
    p = rng.normal(size=(5, 3)) * 30
    q = p + 3.0
    shuffled = LandmarkSet(q[::-1], IDS[::-1])
    t = rlr(_lmks(p), shuffled)
    np.testing.assert_allclose(t.translation, 3.0, atol=1e-9)


def test_rlr_random_restart_optimality(rng):
    p = rng.normal(size=(5, 3)) * 30
    q = p @ random_rotation(rng).T * 1.3 + rng.normal(size=(5, 3)) * 2
    t = rlr(_lmks(p), _lmks(q))
    best = ((t.apply(p) - q) ** 2).sum()
    for _ in range(1000):
        r = SimilarityTransform(rng.uniform(0.5, 2.0), random_rotation(rng), rng.normal(size=3) * 10)
        assert best <= ((r.apply(p) - q) ** 2).sum()


def test_rlr_without_scale(rng):
    p = rng.normal(size=(6, 3)) * 30
    rot = random_rotation(rng)
    t = rlr(_lmks(p, range(6)), _lmks(2.0 * p @ rot.T, range(6)), with_scale=False)
    assert t.scale == 1.0
    np.testing.assert_allclose(t.rotation, rot, atol=1e-9)


def test_rlr_errors(rng):
    p = rng.normal(size=(5, 3))
    with pytest.raises(DataError):
        rlr(_lmks(p), _lmks(p, (1, 2, 3, 4, 5)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(NumericalError):
        rlr(_lmks(line), _lmks(line))


def test_rlr_invariant_under_common_frame(rng):
    p = rng.normal(size=(5, 3)) * 30
    q = p @ random_rotation(rng).T * 1.2 + rng.normal(size=(5, 3))
    f = SimilarityTransform(1.0, random_rotation(rng), rng.normal(size=3) * 50)
    t1 = rlr(_lmks(p), _lmks(q))
    t2 = rlr(_lmks(f.apply(p)), _lmks(f.apply(q)))
    np.testing.assert_allclose(f.apply(t1.apply(p)), t2.apply(f.apply(p)), atol=1e-9)


def test_apply_transform_properties(small_template, rng):
    m = small_template.mesh
    assert np.array_equal(apply_transform(m, SimilarityTransform.identity()).vertices, m.vertices)
    t = SimilarityTransform(1.7, random_rotation(rng), rng.normal(size=3))
    back = apply_transform(apply_transform(m, t), t.inverse())
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-9)
    np.testing.assert_allclose(t.inverse().compose(t).as_matrix(), np.eye(4), atol=1e-12)
    sub = m.vertices[:300]
    np.testing.assert_allclose(pdist(t.apply(sub)), 1.7 * pdist(sub), rtol=1e-12)
    np.testing.assert_array_equal(apply_transform(m, t).faces, m.faces)


def test_icp_identity(small_template):
    g = small_template.mesh
    res = run_icp(g, g)
    assert res.iterations == 1
    np.testing.assert_allclose(res.transform.as_matrix(), np.eye(4), atol=1e-8)


def _ellipsoid(n=2000, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    return Mesh(v / np.linalg.norm(v, axis=1, keepdims=True) * [80.0, 60.0, 40.0])


@pytest.mark.parametrize("axis", "xyz")
@pytest.mark.parametrize("with_scale", [True, False])
def test_icp_recovers_rigid_perturbation(axis, with_scale):
    g = _ellipsoid()
    rot = Rotation.from_euler(axis, 5, degrees=True).as_matrix()
    p = SimilarityTransform(1.0, rot, [3.0, 0, 0])
    res = run_icp(apply_transform(g, p), g,
                  params=IcpParams(max_iterations=200, rel_tolerance=1e-12, with_scale=with_scale))
    assert res.rms_history[-1] < 1e-6
    np.testing.assert_allclose(res.transform.as_matrix(), p.inverse().as_matrix(), atol=1e-6)


@given(st.integers(0, 10_000))
def test_icp_rms_monotone(small_template, seed):
    rng = np.random.default_rng(seed)
    g = small_template.mesh
    rot = Rotation.from_rotvec(rng.normal(size=3) * 0.1).as_matrix()
    r = g.with_vertices(g.vertices @ rot.T + rng.normal(size=3) * 3 + rng.normal(size=g.vertices.shape) * 0.3)
    res = run_icp(r, g, params=IcpParams(max_iterations=15, subsample=300))
    h = np.array(res.rms_history)
    assert (np.diff(h) <= 0).all()
    assert h[-1] <= h[0]


def test_icp_degenerate_correspondence():
    g = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]))
    r = Mesh(np.array([[100.0, 100, 100], [101, 100, 100], [100, 101, 100.5], [100.5, 100.5, 100]]))
    with pytest.raises(NumericalError):
        icp(r, g)


def test_icp_params_validation():
    with pytest.raises(ValueError):
        IcpParams(max_iterations=0)
    with pytest.raises(ValueError):
        IcpParams(rel_tolerance=0)


def test_fit_similarity_shape_error():
    with pytest.raises(DataError):
        fit_similarity(np.zeros((4, 3)), np.zeros((5, 3)))
