"""Triangle meshes of bone instances and ASCII PLY export."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage import measure


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float mm
    triangles: np.ndarray  # (F, 3) int

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def euler_characteristic(self) -> int:
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        n_edges = len(np.unique(e, axis=0))
        return len(self.vertices) - n_edges + len(self.triangles)


def marching_cubes(voxels: np.ndarray, spacing_mm) -> TriangleMesh:
    """Iso-surface at level 0.5 of the binary occupancy of ``voxels``.

    ``voxels`` is an (n, 3) array of grid coordinates. On a 0/1 field the
    linear edge interpolation puts every vertex at an edge midpoint. The
    grid is padded by one empty cell so the surface always closes.
    Coordinates are voxel-center based: grid index i maps to (i + 0.5) * spacing.
    """
    voxels = np.asarray(voxels)
    if voxels.size == 0:
        raise ValueError("cannot mesh an empty instance")
    lo = voxels.min(axis=0)
    ext = voxels.max(axis=0) - lo + 1
    field = np.zeros(tuple(int(n) + 2 for n in ext), dtype=np.float32)
    rel = voxels - lo + 1
    field[rel[:, 0], rel[:, 1], rel[:, 2]] = 1.0
    verts, faces, _, _ = measure.marching_cubes(field, level=0.5, method="lewiner",
                                                allow_degenerate=False)
    sp = np.asarray(spacing_mm, dtype=float)
    verts = (verts.astype(float) + lo - 1 + 0.5) * sp
    # skimage winds triangles so normals point toward lower values; flip to
    # point outward from the solid
    faces = faces[:, ::-1].astype(np.int64)
    return TriangleMesh(verts, np.ascontiguousarray(faces))


def write_ply(mesh: TriangleMesh, path) -> None:
    path = Path(path)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines += [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_ply(path) -> TriangleMesh:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    end = text.index("end_header")
    nv = nf = 0
    for line in text[:end]:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
    body = text[end + 1:]
    verts = np.array([[float(t) for t in ln.split()] for ln in body[:nv]]).reshape(nv, 3)
    tris = np.array([[int(t) for t in ln.split()[1:4]] for ln in body[nv:nv + nf]], dtype=np.int64).reshape(nf, 3)
    return TriangleMesh(verts, tris)
