import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facebench.errors import DataError, MeshFormatError
from facebench.mesh import (LandmarkSet, Mesh, PerVertexError, VertexMask, load_error_mesh, load_landmarks,
                            load_mesh, save_error_mesh, save_landmarks, save_mesh)

TRI = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])


def test_minimal_txt(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("0 0 0\n1 0 0\n0 1 0\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.faces is None
    np.testing.assert_array_equal(m.vertices, TRI)


def test_nan_row_named(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("0 0 0\n1 0 0\n0 nan 0\n")
    with pytest.raises(MeshFormatError, match=":3"):
        load_mesh(p)


def test_inf_rejected(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("0 0 0\n1 0 inf\n0 1 0\n")
    with pytest.raises(MeshFormatError, match=":2"):
        load_mesh(p)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_mesh(tmp_path / "nope.txt")


def test_obj_faces_and_bad_index(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_mesh(p)
    np.testing.assert_array_equal(m.faces, [[0, 1, 2]])
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
    with pytest.raises(MeshFormatError, match=":4"):
        load_mesh(p)


def test_invariants():
    with pytest.raises(DataError):
        Mesh(TRI[:2])
    with pytest.raises(DataError):
        Mesh(TRI, [[0, 1, 3]])
    with pytest.raises(DataError):
        Mesh(TRI, [[0, 1, 1]])
    m = Mesh(TRI, [[0, 1, 2]])
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(3, 40), st.just(3)), elements=finite))
def test_txt_roundtrip_bit_exact(tmp_path_factory, v):
    p = tmp_path_factory.mktemp("rt") / "m.txt"
    save_mesh(Mesh(v), p)
    np.testing.assert_array_equal(load_mesh(p).vertices, v)


@pytest.mark.parametrize("ext", [".obj", ".ply"])
def test_faces_roundtrip(tmp_path, small_template, ext):
    m = small_template.mesh
    p = tmp_path / f"m{ext}"
    save_mesh(m, p)
    back = load_mesh(p)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.faces, m.faces)


def test_landmarks_reference_ids(tmp_path):
    p = tmp_path / "a.lmks"
    p.write_text("".join(f"{i} {i} 0 1\n" for i in (13, 19, 28, 31, 37)))
    lm = load_landmarks(p)
    assert len(lm) == 5 and lm.ids == (13, 19, 28, 31, 37)


def test_landmarks_too_few(tmp_path):
    p = tmp_path / "a.lmks"
    p.write_text("13 0 0 0\n19 1 0 0\n")
    with pytest.raises(MeshFormatError, match="fewer than 3 landmarks"):
        load_landmarks(p)


def test_landmarks_duplicate_id(tmp_path):
    p = tmp_path / "a.lmks"
    p.write_text("13 0 0 0\n19 1 0 0\n13 0 1 0\n")
    with pytest.raises(MeshFormatError, match="duplicate"):
        load_landmarks(p)


def test_landmarks_roundtrip_and_subset(tmp_path, rng):
    lm = LandmarkSet(rng.normal(size=(5, 3)), (13, 19, 28, 31, 37))
    save_landmarks(lm, tmp_path / "x.lmks")
    back = load_landmarks(tmp_path / "x.lmks")
    np.testing.assert_array_equal(back.points, lm.points)
    sub = lm.subset([28, 13, 19])
    np.testing.assert_array_equal(sub.points, lm.points[[2, 0, 1]])
    with pytest.raises(DataError):
        lm.subset([1, 2, 3])


def test_error_mesh(tmp_path):
    m = Mesh(TRI, [[0, 1, 2]])
    save_error_mesh(m, PerVertexError([0.0, 1.0, 2.0]), tmp_path / "e.ply")
    back, e = load_error_mesh(tmp_path / "e.ply")
    assert len(e) == 3
    np.testing.assert_allclose(e, [0, 1, 2], atol=1e-6)
    np.testing.assert_array_equal(back.faces, m.faces)
    with pytest.raises(DataError):
        save_error_mesh(m, PerVertexError([0.0, 1.0]), tmp_path / "bad.ply")


@given(arrays(np.float64, st.integers(3, 50), elements=st.floats(0, 1e3)))
def test_error_ply_roundtrip(tmp_path_factory, vals):
    m = Mesh(np.arange(3 * len(vals), dtype=float).reshape(-1, 3))
    p = tmp_path_factory.mktemp("ply") / "e.ply"
    save_error_mesh(m, PerVertexError(vals), p)
    _, e = load_error_mesh(p)
    np.testing.assert_allclose(e, vals, rtol=1e-6, atol=1e-6)


def test_per_vertex_error_mean_and_mask():
    e = PerVertexError([1.0, 2.0, 3.0, 6.0])
    assert e.mean == 3.0
    assert PerVertexError(e.values, [0, 3]).mean == 3.5
    assert PerVertexError(e.values, np.arange(4)).mean == e.mean
    with pytest.raises(DataError):
        PerVertexError([-1.0, 1.0])
    with pytest.raises(DataError):
        PerVertexError(e.values, [0, 0])
    with pytest.raises(DataError):
        VertexMask([0, 5], n=4)


def test_mean_edge_length():
    m = Mesh(TRI, [[0, 1, 2]])
    assert m.mean_edge_length() == pytest.approx((2 + np.sqrt(2)) / 3)
