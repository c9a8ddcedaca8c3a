"""Structured triangulations of the unit square."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Mesh:
    """Uniform ``m x m`` grid, every square cut along its lower-left/upper-right diagonal.

    ``tri_edges[t, i]`` is the edge opposite local vertex ``i`` of triangle ``t``.
    """

    m: int
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    boundary_vertices: np.ndarray
    boundary_edges: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def dump_csv(self, directory: str | Path) -> tuple[Path, Path]:
        """Write ``vertices.csv`` and ``triangles.csv`` for inspection."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        vpath, tpath = directory / "vertices.csv", directory / "triangles.csv"
        with vpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y", "boundary"])
            for i, (x, y) in enumerate(self.vertices):
                w.writerow([i, repr(float(x)), repr(float(y)), int(self.boundary_vertices[i])])
        with tpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "v0", "v1", "v2"])
            for i, tri in enumerate(self.triangles):
                w.writerow([i, *map(int, tri)])
        return vpath, tpath


def generate_mesh(m: int) -> Mesh:
    if int(m) != m or m < 2:
        raise ValueError(f"need at least 2 subdivisions per side, got {m!r}")
    m = int(m)
    n1 = m + 1
    xs = np.linspace(0.0, 1.0, n1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    i, j = i.ravel(), j.ravel()
    a = i + n1 * j
    b = a + 1
    c = a + n1 + 1
    d = a + n1
    triangles = np.empty((2 * m * m, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    local = np.array([[1, 2], [2, 0], [0, 1]])
    all_edges = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)

    on_bnd = (np.isclose(vertices[:, 0], 0.0) | np.isclose(vertices[:, 0], 1.0)
              | np.isclose(vertices[:, 1], 0.0) | np.isclose(vertices[:, 1], 1.0))
    mid = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    edge_bnd = (np.isclose(mid[:, 0], 0.0) | np.isclose(mid[:, 0], 1.0)
                | np.isclose(mid[:, 1], 0.0) | np.isclose(mid[:, 1], 1.0))

    return Mesh(m, vertices, triangles, edges, tri_edges, on_bnd, edge_bnd)
