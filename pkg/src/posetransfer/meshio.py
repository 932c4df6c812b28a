"""Mesh data model and ascii OBJ/PLY codecs.

OBJ: `v`/`f` records, 1-based indices, polygons triangulated by fan.
PLY: ascii 1.0, element vertex with float/double x y z, optional element face
with `vertex_indices` (or `vertex_index`) lists, also fan-triangulated.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshFormatError


@dataclass
class Mesh:
    vertices: np.ndarray                    # (N, 3) float64
    faces: np.ndarray | None = None         # (F, 3) int64, or None for a raw cloud
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        if self.faces is not None:
            self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
            n = len(self.vertices)
            if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
                raise MeshFormatError(
                    f"face index out of range for {n} vertices "
                    f"(min {self.faces.min()}, max {self.faces.max()})"
                )
            f = self.faces
            dup = (f[:, 0] == f[:, 1]) | (f[:, 0] == f[:, 2]) | (f[:, 1] == f[:, 2])
            if dup.any():
                bad = f[int(np.argmax(dup))]
                raise MeshFormatError(f"degenerate face {tuple(int(i) for i in bad)}")

    @property
    def points(self) -> np.ndarray:
        return self.vertices

    def with_vertices(self, vertices, name=None) -> "Mesh":
        return Mesh(np.asarray(vertices, dtype=np.float64),
                    None if self.faces is None else self.faces.copy(),
                    self.name if name is None else name)


def _fan(indices, line):
    if len(indices) < 3:
        raise MeshFormatError("face needs at least 3 vertices", line)
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def parse_obj(text: str | bytes, name: str = "") -> Mesh:
    if isinstance(text, bytes):
        text = text.decode()
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise MeshFormatError("vertex record needs 3 coordinates", lineno)
            try:
                verts.append([float(x) for x in rest[:3]])
            except ValueError:
                raise MeshFormatError(f"bad vertex coordinate in {raw!r}", lineno) from None
        elif tag == "f":
            try:
                idx = [int(tok.split("/")[0]) - 1 for tok in rest]
            except ValueError:
                raise MeshFormatError(f"bad face index in {raw!r}", lineno) from None
            if any(i < 0 for i in idx):
                raise MeshFormatError("face index must be >= 1", lineno)
            faces.extend(_fan(idx, lineno))
        # other record types (vn, vt, o, ...) are ignored
    if not verts:
        raise MeshFormatError("no vertices found")
    return Mesh(np.array(verts), np.array(faces) if faces else None, name=name)


def write_obj(mesh: Mesh) -> str:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    if mesh.faces is not None:
        for f in mesh.faces:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"


def parse_ply(text: str | bytes, name: str = "") -> Mesh:
    if isinstance(text, bytes):
        text = text.decode()
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("missing 'ply' magic", 1)
    n_vertex = n_face = 0
    vertex_props = []
    current = None
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line.startswith("comment") or not line:
            continue
        if line.startswith("format"):
            if "ascii" not in line:
                raise MeshFormatError("only ascii PLY is supported", lineno)
        elif line.startswith("element"):
            _, kind, count = line.split()
            current = kind
            if kind == "vertex":
                n_vertex = int(count)
            elif kind == "face":
                n_face = int(count)
            else:
                raise MeshFormatError(f"unsupported element {kind!r}", lineno)
        elif line.startswith("property"):
            if current == "vertex":
                vertex_props.append(line.split()[-1])
        elif line == "end_header":
            body_start = lineno  # lines[] index of first body line
            break
        else:
            raise MeshFormatError(f"unexpected header line {line!r}", lineno)
    if body_start is None:
        raise MeshFormatError("missing end_header")
    for axis in ("x", "y", "z"):
        if axis not in vertex_props:
            raise MeshFormatError(f"vertex element lacks property {axis!r}")
    cols = [vertex_props.index(a) for a in ("x", "y", "z")]
    body = lines[body_start:]
    if len(body) < n_vertex + n_face:
        raise MeshFormatError(
            f"expected {n_vertex + n_face} body lines, found {len(body)}", body_start + 1
        )
    verts = np.empty((n_vertex, 3))
    for i in range(n_vertex):
        toks = body[i].split()
        try:
            verts[i] = [float(toks[c]) for c in cols]
        except (ValueError, IndexError):
            raise MeshFormatError(f"bad vertex record {body[i]!r}", body_start + 1 + i) from None
    faces = []
    for i in range(n_face):
        lineno = body_start + 1 + n_vertex + i
        toks = body[n_vertex + i].split()
        try:
            cnt = int(toks[0])
            idx = [int(t) for t in toks[1 : 1 + cnt]]
        except (ValueError, IndexError):
            raise MeshFormatError(f"bad face record {body[n_vertex + i]!r}", lineno) from None
        if len(idx) != cnt:
            raise MeshFormatError("face list shorter than its declared count", lineno)
        faces.extend(_fan(idx, lineno))
    return Mesh(verts, np.array(faces) if faces else None, name=name)


def write_ply(mesh: Mesh) -> str:
    n_face = 0 if mesh.faces is None else len(mesh.faces)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {n_face}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v in mesh.vertices:
        lines.append(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    if mesh.faces is not None:
        for f in mesh.faces:
            lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    return "\n".join(lines) + "\n"


def load_mesh(path, fmt: str | None = None) -> Mesh:
    """Read a mesh file, inferring the codec from the extension."""
    path = str(path)
    with open(path, "rb") as fh:
        text = fh.read()
    fmt = fmt or ("ply" if path.lower().endswith(".ply") else "obj")
    parser = parse_ply if fmt == "ply" else parse_obj
    return parser(text, name=path)


def save_mesh(path, mesh: Mesh, fmt: str | None = None):
    path = str(path)
    fmt = fmt or ("ply" if path.lower().endswith(".ply") else "obj")
    writer = write_ply if fmt == "ply" else write_obj
    with open(path, "w") as fh:
        fh.write(writer(mesh))
