"""OBJ/PLY codecs and the mesh data model."""
import numpy as np
import pytest

from posetransfer.errors import MeshFormatError
from posetransfer.meshio import (Mesh, load_mesh, parse_obj, parse_ply,
                                 save_mesh, write_obj, write_ply)

TRIANGLE_OBJ = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"


def test_obj_single_triangle():
    mesh = parse_obj(TRIANGLE_OBJ)
    assert len(mesh.vertices) == 3
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_obj_quad_fan_triangulation():
    mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_round_trip_random_mesh():
    rng = np.random.default_rng(0)
    verts = rng.normal(size=(100, 3))
    faces = np.array([(i, i + 1, i + 2) for i in range(98)])
    mesh = Mesh(verts, faces)
    back = parse_obj(write_obj(mesh))
    assert np.array_equal(back.faces, faces)
    assert np.abs(back.vertices - verts).max() < 1e-8


def test_obj_errors_carry_line_numbers():
    with pytest.raises(MeshFormatError) as exc:
        parse_obj("v 0 0 0\nv 1 0 x\n")
    assert exc.value.line == 2
    with pytest.raises(MeshFormatError):
        parse_obj("v 0 0\n")
    with pytest.raises(MeshFormatError):
        parse_obj("v 0 0 0\nf 1 2 3\n")  # face index out of range
    with pytest.raises(MeshFormatError):
        parse_obj("")  # no vertices


def test_obj_ignores_comments_and_other_records():
    mesh = parse_obj("# header\nvn 0 0 1\no thing\n" + TRIANGLE_OBJ)
    assert len(mesh.vertices) == 3


def test_ply_single_triangle_round_trip():
    mesh = parse_obj(TRIANGLE_OBJ)
    back = parse_ply(write_ply(mesh))
    assert np.abs(back.vertices - mesh.vertices).max() < 1e-8
    assert np.array_equal(back.faces, mesh.faces)


def test_ply_quad_fan_and_property_order():
    text = (
        "ply\nformat ascii 1.0\n"
        "element vertex 4\n"
        "property double y\nproperty double x\nproperty double z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n0 1 0\n1 1 0\n1 0 0\n"
        "4 0 1 2 3\n"
    )
    mesh = parse_ply(text)
    # x comes from the second column because the header declares y first
    assert mesh.vertices[1].tolist() == [1.0, 0.0, 0.0]
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_ply_round_trip_random_mesh():
    rng = np.random.default_rng(1)
    verts = rng.normal(size=(100, 3))
    faces = np.array([(i, i + 1, i + 2) for i in range(98)])
    back = parse_ply(write_ply(Mesh(verts, faces)))
    assert np.array_equal(back.faces, faces)
    assert np.abs(back.vertices - verts).max() < 1e-8


def test_ply_errors():
    with pytest.raises(MeshFormatError):
        parse_ply("not a ply\n")
    with pytest.raises(MeshFormatError):
        parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(MeshFormatError):
        parse_ply("ply\nformat ascii 1.0\nelement vertex 2\n"
                  "property double x\nproperty double y\nproperty double z\n"
                  "end_header\n0 0 0\n")  # truncated body


def test_mesh_rejects_bad_faces():
    with pytest.raises(MeshFormatError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(MeshFormatError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))


def test_point_cloud_has_no_faces():
    cloud = Mesh(np.zeros((4, 3)))
    assert cloud.faces is None
    assert np.array_equal(cloud.points, cloud.vertices)


def test_load_save_extension_inference(tmp_path):
    mesh = parse_obj(TRIANGLE_OBJ)
    for name in ("m.obj", "m.ply"):
        save_mesh(tmp_path / name, mesh)
        back = load_mesh(tmp_path / name)
        assert np.abs(back.vertices - mesh.vertices).max() < 1e-8
        assert np.array_equal(back.faces, mesh.faces)
