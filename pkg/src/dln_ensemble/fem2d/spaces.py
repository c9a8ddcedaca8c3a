"""Taylor-Hood (P2 velocity, P1 pressure) spaces and operator assembly.

Velocity vectors are component-blocked: entry ``c * n_nodes + i`` is
component ``c`` at P2 node ``i``, where nodes ``0 .. n_vertices-1`` are the
mesh vertices and ``n_vertices + e`` is the midpoint of edge ``e``.
Pressure vectors hold one value per vertex.
"""

from __future__ import annotations

import math
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, generate_mesh

# degree-5, 7-point rule on the reference triangle (barycentric points, weights sum to 1)
_S15 = math.sqrt(15.0)
_A1 = (6.0 - _S15) / 21.0
_A2 = (6.0 + _S15) / 21.0
_W1 = (155.0 - _S15) / 1200.0
_W2 = (155.0 + _S15) / 1200.0
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [1 - 2 * _A1, _A1, _A1], [_A1, 1 - 2 * _A1, _A1], [_A1, _A1, 1 - 2 * _A1],
    [1 - 2 * _A2, _A2, _A2], [_A2, 1 - 2 * _A2, _A2], [_A2, _A2, 1 - 2 * _A2],
])
QUAD_WEIGHTS = np.array([9 / 40, _W1, _W1, _W1, _W2, _W2, _W2])

# P2 local ordering: vertices 0,1,2 then midpoints of edges opposite 0,1,2
_EDGE_PAIRS = ((1, 2), (2, 0), (0, 1))


def _p2_values(lam: np.ndarray) -> np.ndarray:
    """Basis values at barycentric points ``lam`` (Q, 3) -> (Q, 6)."""
    out = np.empty((lam.shape[0], 6))
    for i in range(3):
        out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        out[:, 3 + k] = 4.0 * lam[:, i] * lam[:, j]
    return out


def _p2_dlam(lam: np.ndarray) -> np.ndarray:
    """Derivatives with respect to the barycentric coordinates, (Q, 6, 3)."""
    out = np.zeros((lam.shape[0], 6, 3))
    for i in range(3):
        out[:, i, i] = 4.0 * lam[:, i] - 1.0
    for k, (i, j) in enumerate(_EDGE_PAIRS):
        out[:, 3 + k, i] = 4.0 * lam[:, j]
        out[:, 3 + k, j] = 4.0 * lam[:, i]
    return out


class _Pattern:
    """Fixed COO pattern with a precomputed reduction to CSR."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        self.shape = shape
        key = rows.astype(np.int64) * shape[1] + cols
        uniq, self._inv = np.unique(key, return_inverse=True)
        self._nnz = len(uniq)
        self._indices = (uniq % shape[1]).astype(np.int32)
        counts = np.bincount(uniq // shape[1], minlength=shape[0])
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def build(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._inv, weights=values.ravel(), minlength=self._nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=self.shape)


class TaylorHood:
    """P2-P1 spaces on a structured mesh with all operators needed for the NSE step."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv, ne = mesh.n_vertices, mesh.n_edges
        self.n_nodes = nv + ne
        self.n_velocity = 2 * self.n_nodes
        self.n_pressure = nv
        self.elem_nodes = np.hstack([mesh.triangles, nv + mesh.tri_edges])
        self.node_coords = np.vstack([mesh.vertices, mesh.edge_midpoints()])
        self.boundary_nodes = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
        self.free_nodes = np.flatnonzero(~self.boundary_nodes)
        self.bnd_nodes = np.flatnonzero(self.boundary_nodes)
        self.free_velocity = np.concatenate([self.free_nodes, self.n_nodes + self.free_nodes])
        self.bnd_velocity = np.concatenate([self.bnd_nodes, self.n_nodes + self.bnd_nodes])

        p = mesh.vertices[mesh.triangles]  # (T, 3, 2)
        self.areas = mesh.areas()
        # gradients of barycentric coordinates, (T, 3, 2)
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.areas
        glam = np.empty((len(p), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            glam[:, i, 0] = (y[:, j] - y[:, k]) / two_a
            glam[:, i, 1] = (x[:, k] - x[:, j]) / two_a
        self._glam = glam
        self.phi = _p2_values(QUAD_BARY)  # (Q, 6)
        self.psi = QUAD_BARY.copy()  # P1 values (Q, 3)
        # physical gradients of P2 basis, (T, Q, 6, 2)
        self.dphi = np.einsum("qkl,tlc->tqkc", _p2_dlam(QUAD_BARY), glam)
        self.wq = self.areas[:, None] * QUAD_WEIGHTS[None, :]  # (T, Q)
        self.quad_points = np.einsum("ql,tlc->tqc", QUAD_BARY, p)  # (T, Q, 2)

        en = self.elem_nodes
        self._p2p2 = _Pattern(np.repeat(en, 6, axis=1).ravel(), np.tile(en, (1, 6)).ravel(),
                              (self.n_nodes, self.n_nodes))

    # -- scalar building blocks -------------------------------------------------
    @cached_property
    def scalar_mass(self) -> sp.csr_matrix:
        vals = np.einsum("tq,qi,qj->tij", self.wq, self.phi, self.phi)
        return self._p2p2.build(vals)

    @cached_property
    def scalar_stiffness(self) -> sp.csr_matrix:
        vals = np.einsum("tq,tqic,tqjc->tij", self.wq, self.dphi, self.dphi)
        return self._p2p2.build(vals)

    def scalar_advection(self, w: np.ndarray) -> sp.csr_matrix:
        """``C[i, j] = ((w . grad) phi_j, phi_i)`` for a velocity field ``w``."""
        wn = self.n_nodes
        w = np.asarray(w, dtype=float)
        w1 = w[:wn][self.elem_nodes] @ self.phi.T  # (T, Q)
        w2 = w[wn:][self.elem_nodes] @ self.phi.T
        wgrad = w1[:, :, None] * self.dphi[..., 0] + w2[:, :, None] * self.dphi[..., 1]  # (T, Q, 6)
        vals = np.einsum("tq,qi,tqj->tij", self.wq, self.phi, wgrad)
        return self._p2p2.build(vals)

    # -- vector operators -------------------------------------------------------
    @cached_property
    def mass(self) -> sp.csr_matrix:
        return sp.block_diag([self.scalar_mass, self.scalar_mass], format="csr")

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        return sp.block_diag([self.scalar_stiffness, self.scalar_stiffness], format="csr")

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """``B[q, (c, j)] = (d_c phi_j, psi_q)``, shape ``(n_pressure, n_velocity)``."""
        tri = self.mesh.triangles
        blocks = []
        for c in range(2):
            vals = np.einsum("tq,qi,tqj->tij", self.wq, self.psi, self.dphi[..., c])
            rows = np.repeat(tri, 6, axis=1).ravel()
            cols = np.tile(self.elem_nodes, (1, 3)).ravel()
            blocks.append(sp.csr_matrix((vals.ravel(), (rows, cols)),
                                        shape=(self.n_pressure, self.n_nodes)))
        B = sp.hstack(blocks, format="csr")
        B.sum_duplicates()
        return B

    @cached_property
    def pressure_mass(self) -> sp.csr_matrix:
        tri = self.mesh.triangles
        vals = np.einsum("tq,qi,qj->tij", self.wq, self.psi, self.psi)
        M = sp.csr_matrix((vals.ravel(), (np.repeat(tri, 3, axis=1).ravel(), np.tile(tri, (1, 3)).ravel())),
                          shape=(self.n_pressure, self.n_pressure))
        M.sum_duplicates()
        return M

    @cached_property
    def pressure_mean(self) -> np.ndarray:
        """``(psi_q, 1)`` for every pressure basis function."""
        return np.asarray(self.pressure_mass.sum(axis=1)).ravel()

    def convection(self, w: np.ndarray) -> sp.csr_matrix:
        """Matrix of the skew form: ``v^T N(w) u = b(w, u, v)``; exactly antisymmetric."""
        C = self.scalar_advection(w)
        Ns = 0.5 * (C - C.T.tocsr())
        return sp.block_diag([Ns, Ns], format="csr")

    def scalar_convection(self, w: np.ndarray) -> sp.csr_matrix:
        C = self.scalar_advection(w)
        return 0.5 * (C - C.T.tocsr())

    @cached_property
    def _scatter(self) -> sp.csr_matrix:
        """Sums element-local P2 values (flattened ``(T, 6)``) into global nodes."""
        nodes = self.elem_nodes.ravel()
        return sp.csr_matrix((np.ones(len(nodes)), (nodes, np.arange(len(nodes)))),
                             shape=(self.n_nodes, len(nodes)))

    @cached_property
    def _dphi_t(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.ascontiguousarray(self.dphi[..., d].transpose(0, 2, 1)) for d in range(2))

    def convection_actions(self, W: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Rows ``b(W[j], V[j], phi_i)`` for stacked fields of shape (J, n_velocity)."""
        n, en = self.n_nodes, self.elem_nodes
        W, V = np.atleast_2d(W), np.atleast_2d(V)
        T = len(en)
        wl = [W[:, c * n:(c + 1) * n].T[en] for c in range(2)]  # (T, 6, J)
        vl = [V[:, c * n:(c + 1) * n].T[en] for c in range(2)]
        wq = [self.phi @ a for a in wl]  # (T, Q, J)
        vq = [self.phi @ a for a in vl]
        dT = self._dphi_t  # per direction (T, 6, Q)
        weights = self.wq[:, :, None]
        out = np.empty_like(V)
        for c in range(2):
            grad = [np.matmul(dT[d].transpose(0, 2, 1), vl[c]) for d in range(2)]  # (T, Q, J)
            adv = wq[0] * grad[0] + wq[1] * grad[1]
            term1 = self.phi.T @ (weights * adv)
            wv = weights * vq[c]
            term2 = np.matmul(dT[0], wv * wq[0]) + np.matmul(dT[1], wv * wq[1])
            loc = 0.5 * (term1 - term2)  # (T, 6, J)
            out[:, c * n:(c + 1) * n] = (self._scatter @ loc.reshape(T * 6, -1)).T
        return out

    def convection_action(self, w: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Vector with entries ``b(w, v, phi_i)``; equals ``convection(w) @ v`` without forming a matrix."""
        return self.convection_actions(w[None, :], v[None, :])[0]

    def trilinear_b(self, u: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
        """``b(u, v, w) = 1/2((u.grad)v, w) - 1/2((u.grad)w, v)``."""
        return float(np.asarray(w) @ (self.convection(u) @ np.asarray(v)))

    # -- fields, norms ----------------------------------------------------------
    def interpolate_velocity(self, fn: Callable[[np.ndarray, np.ndarray], tuple]) -> np.ndarray:
        """Nodal P2 interpolant of ``fn(x, y) -> (u1, u2)``."""
        x, y = self.node_coords[:, 0], self.node_coords[:, 1]
        u1, u2 = fn(x, y)
        return np.concatenate([np.broadcast_to(u1, x.shape), np.broadcast_to(u2, x.shape)]).astype(float)

    def interpolate_pressure(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                             mean_zero: bool = True) -> np.ndarray:
        v = self.mesh.vertices
        p = np.broadcast_to(fn(v[:, 0], v[:, 1]), (self.n_pressure,)).astype(float)
        return self.remove_mean(p) if mean_zero else p

    def remove_mean(self, p: np.ndarray) -> np.ndarray:
        return p - (self.pressure_mean @ p) / self.pressure_mean.sum()

    def l2_norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(float(u @ (self.mass @ u)), 0.0))

    def h1_seminorm(self, u: np.ndarray) -> float:
        return math.sqrt(max(float(u @ (self.stiffness @ u)), 0.0))

    def h1_norm(self, u: np.ndarray) -> float:
        return math.sqrt(self.l2_norm(u) ** 2 + self.h1_seminorm(u) ** 2)

    def pressure_l2(self, p: np.ndarray) -> float:
        """L2 norm of the mean-free part of ``p``."""
        q = self.remove_mean(p)
        return math.sqrt(max(float(q @ (self.pressure_mass @ q)), 0.0))

    def velocity_at_quad(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_nodes
        return u[:n][self.elem_nodes] @ self.phi.T, u[n:][self.elem_nodes] @ self.phi.T

    def velocity_grad_at_quad(self, u: np.ndarray) -> np.ndarray:
        """(T, Q, 2 components, 2 directions)."""
        n = self.n_nodes
        g1 = np.einsum("ti,tqic->tqc", u[:n][self.elem_nodes], self.dphi)
        g2 = np.einsum("ti,tqic->tqc", u[n:][self.elem_nodes], self.dphi)
        return np.stack([g1, g2], axis=2)

    def l2_error(self, u: np.ndarray, exact: Callable) -> float:
        """``||u_exact - u_h||`` by quadrature; ``exact(x, y) -> (u1, u2)``."""
        X, Y = self.quad_points[..., 0], self.quad_points[..., 1]
        e1, e2 = exact(X, Y)
        h1, h2 = self.velocity_at_quad(u)
        return math.sqrt(float(np.sum(self.wq * ((e1 - h1) ** 2 + (e2 - h2) ** 2))))

    def h1_seminorm_error(self, u: np.ndarray, exact_grad: Callable) -> float:
        """``exact_grad(x, y)`` returns an array broadcastable to (..., 2, 2): ``[comp][direction]``."""
        X, Y = self.quad_points[..., 0], self.quad_points[..., 1]
        g = np.asarray(exact_grad(X, Y))
        g = np.moveaxis(g, (0, 1), (-2, -1)) if g.shape[:2] == (2, 2) else g
        d = g - self.velocity_grad_at_quad(u)
        return math.sqrt(float(np.sum(self.wq[..., None, None] * d ** 2)))

    def h1_error(self, u: np.ndarray, exact: Callable, exact_grad: Callable) -> float:
        return math.hypot(self.l2_error(u, exact), self.h1_seminorm_error(u, exact_grad))

    def pressure_l2_error(self, p: np.ndarray, exact: Callable) -> float:
        X, Y = self.quad_points[..., 0], self.quad_points[..., 1]
        ph = p[self.mesh.triangles] @ self.psi.T
        d = np.broadcast_to(exact(X, Y), ph.shape) - ph
        return math.sqrt(float(np.sum(self.wq * d ** 2)))

    def load_vector(self, f: Callable[[np.ndarray, np.ndarray], tuple]) -> np.ndarray:
        """``(f, phi_i)`` for a vector function evaluated at the quadrature points."""
        X, Y = self.quad_points[..., 0], self.quad_points[..., 1]
        f1, f2 = f(X, Y)
        out = np.empty(self.n_velocity)
        nodes = self.elem_nodes.ravel()
        for c, fc in enumerate((f1, f2)):
            vals = np.einsum("tq,qi->ti", self.wq * np.broadcast_to(fc, X.shape), self.phi)
            out[c * self.n_nodes:(c + 1) * self.n_nodes] = np.bincount(nodes, weights=vals.ravel(),
                                                                        minlength=self.n_nodes)
        return out


def build_spaces(m: int) -> TaylorHood:
    return TaylorHood(generate_mesh(m))


def inf_sup_constant(spaces: TaylorHood, velocity_norm: str = "h1") -> float:
    """Smallest non-zero generalized eigenvalue root of the pressure Schur complement.

    ``velocity_norm="h1"`` uses the stiffness matrix (the LBB constant);
    ``"l2"`` uses the velocity mass matrix.  Both are taken on the free
    velocity dofs against the pressure mass matrix, on mean-zero pressures.
    Dense; meant for small meshes.
    """
    import scipy.linalg as sla

    f = spaces.free_velocity
    B = spaces.divergence[:, f].toarray()
    V = (spaces.stiffness if velocity_norm == "h1" else spaces.mass)[f][:, f].toarray()
    Mp = spaces.pressure_mass.toarray()
    S = B @ sla.solve(V, B.T, assume_a="pos")
    # restrict to mean-zero pressures: project with an orthonormal basis of the complement
    m = spaces.pressure_mean
    Q, _ = np.linalg.qr(np.column_stack([m, np.eye(len(m))[:, :-1]]))
    Z = Q[:, 1:]
    vals = sla.eigh(Z.T @ S @ Z, Z.T @ Mp @ Z, eigvals_only=True)
    return math.sqrt(max(vals[0], 0.0))
