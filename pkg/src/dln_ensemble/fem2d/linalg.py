"""Sparse direct factorization shared by many right-hand sides."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SingularMatrix(np.linalg.LinAlgError):
    pass


@dataclass
class SolverCounters:
    """Instrumentation shared between a solver and its factorizations."""

    factorizations: int = 0
    solve_calls: int = 0
    solved_columns: int = 0
    factor_time: float = 0.0
    solve_time: float = 0.0

    def reset(self) -> None:
        self.factorizations = self.solve_calls = self.solved_columns = 0
        self.factor_time = self.solve_time = 0.0


class Factorization:
    """LU decomposition (SuperLU, with its row/column permutations) of a square sparse matrix.

    With ``order`` given, the matrix is symmetrically permuted by it and
    factored in that order with threshold partial pivoting
    (``pivot_threshold``); otherwise SuperLU's COLAMD ordering and full
    partial pivoting are used.
    """

    def __init__(self, A, counters: SolverCounters | None = None, order: np.ndarray | None = None,
                 pivot_threshold: float = 1e-3):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.shape = A.shape
        self.counters = counters if counters is not None else SolverCounters()
        self.order = None if order is None else np.asarray(order)
        t0 = time.perf_counter()
        try:
            if self.order is None:
                self._lu = splu(A)
            else:
                Ap = A[self.order][:, self.order].tocsc()
                self._lu = splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=pivot_threshold,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        self.counters.factor_time += time.perf_counter() - t0
        self.counters.factorizations += 1

    def _raw_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.order is None:
            return self._lu.solve(np.asfortranarray(rhs))
        x = np.empty_like(rhs)
        x[self.order] = self._lu.solve(np.asfortranarray(rhs[self.order]))
        return x

    @property
    def perm_r(self) -> np.ndarray:
        return self._lu.perm_r

    @property
    def perm_c(self) -> np.ndarray:
        return self._lu.perm_c

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve_many(self, b)


def lu_factor(A, counters: SolverCounters | None = None, order: np.ndarray | None = None) -> Factorization:
    return Factorization(A, counters, order)


def solve_many(F: Factorization, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` for every column of ``rhs`` with the stored factors."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != F.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {F.shape[0]}")
    t0 = time.perf_counter()
    x = F._raw_solve(rhs)
    F.counters.solve_time += time.perf_counter() - t0
    F.counters.solve_calls += 1
    F.counters.solved_columns += 1 if rhs.ndim == 1 else rhs.shape[1]
    if not np.all(np.isfinite(x)):
        raise SingularMatrix("non-finite solution from LU solve")
    return x


def grid_nested_dissection(ix: np.ndarray, iy: np.ndarray, rank: np.ndarray,
                           last: np.ndarray | None = None, leaf: int = 48) -> np.ndarray:
    """Fill-reducing ordering for unknowns attached to points of a structured grid.

    ``ix, iy`` are integer point coordinates with grid lines at even indices.
    The domain is bisected recursively along those lines and every separator
    is numbered after the two halves it splits.  Inside a block unknowns are
    sorted by ``rank`` (lower first).  Entries flagged in ``last`` (such as a
    global multiplier) are numbered at the very end.
    """
    ix, iy, rank = (np.asarray(a) for a in (ix, iy, rank))
    last = np.zeros(len(ix), bool) if last is None else np.asarray(last, bool)
    out: list[np.ndarray] = []

    def ranked(idx):
        return idx[np.lexsort((ix[idx], iy[idx], rank[idx]))]

    inner = np.flatnonzero(~last)
    stack = [(inner, int(ix[inner].min()), int(ix[inner].max()),
              int(iy[inner].min()), int(iy[inner].max()), False)]
    while stack:
        idx, x0, x1, y0, y1, is_separator = stack.pop()
        if is_separator or len(idx) <= leaf or (x1 - x0 <= 2 and y1 - y0 <= 2):
            out.append(ranked(idx))
            continue
        if x1 - x0 >= y1 - y0:
            s, c = x0 + 2 * ((x1 - x0) // 4), ix[idx]
            lo, hi = (idx[c < s], x0, s, y0, y1), (idx[c > s], s, x1, y0, y1)
        else:
            s, c = y0 + 2 * ((y1 - y0) // 4), iy[idx]
            lo, hi = (idx[c < s], x0, x1, y0, s), (idx[c > s], x0, x1, s, y1)
        # popped in reverse: lower half, upper half, then the separator
        stack.append((idx[c == s], x0, x1, y0, y1, True))
        stack.append((*hi, False))
        stack.append((*lo, False))
    out.append(np.flatnonzero(last))
    return np.concatenate(out)
