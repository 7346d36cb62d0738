"""Dense two-phase simplex for equality-form LPs.

Solves ``min c^T x  s.t.  A x = b, x >= 0``.  Phase one is run once per
constraint system; later objectives re-optimise from the last optimal
basis, which is what Frank-Wolfe needs (a fixed polytope, many objectives).
"""

from __future__ import annotations

import numpy as np

from .errors import LpInfeasible, LpUnbounded

PIVOT_TOL = 1e-9
COST_TOL = 1e-10
BLAND_AFTER = 50


class DenseSimplex:
    """Feasible basis for ``{x >= 0 : A x = b}`` plus a phase-two solver.

    Redundant equality rows are detected during phase one and dropped.
    """

    def __init__(self, A, b, start=None, max_pivots=100_000):
        A = np.array(A, dtype=float)
        b = np.array(b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.size:
            raise ValueError("A must be (m, n) and b of length m")
        neg = b < 0
        A[neg] *= -1.0
        b[neg] *= -1.0
        self.max_pivots = max_pivots
        self.pivots = 0
        if start is None:
            self._phase_one(A, b)
        else:
            self._crossover(A, b, np.asarray(start, dtype=float).reshape(-1))

    @property
    def n_vars(self):
        return self._A.shape[1]

    def _phase_one(self, A, b):
        m, n = A.shape
        T = np.hstack([A, np.eye(m)])
        rhs = b.copy()
        basis = np.arange(n, n + m)
        cost = np.concatenate([np.zeros(n), np.ones(m)])
        T, rhs, basis = self._optimise(T, rhs, basis, cost)
        if cost[basis] @ rhs > 1e-9 * max(1.0, np.abs(b).max()):
            raise LpInfeasible(f"phase one optimum {cost[basis] @ rhs:.3e} > 0")

        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] < n:
                continue
            cols = np.flatnonzero(np.abs(T[r, :n]) > PIVOT_TOL)
            if cols.size == 0:
                keep[r] = False  # redundant row
                continue
            T, rhs = self._pivot(T, rhs, r, cols[0])
            basis[r] = cols[0]
        self._A = A[keep]
        self._b = b[keep]
        self.basis = basis[keep]
        self.redundant_rows = int((~keep).sum())

    def _crossover(self, A, b, x):
        """Basis from a known feasible point, skipping phase one.

        The point is moved along null-space directions of its support until
        the support columns are independent (a vertex), then the basis is
        completed with further independent columns.
        """
        scale = max(1.0, np.abs(b).max())
        if x.size != A.shape[1] or x.min() < -1e-9 * scale:
            raise ValueError("start point has wrong shape or negative entries")
        if np.abs(A @ x - b).max() > 1e-8 * scale:
            raise ValueError("start point violates A x = b")
        keep = np.zeros(A.shape[0], dtype=bool)
        keep[_independent(A.T)] = True
        A_red, b_red = A[keep], b[keep]

        x = np.clip(x, 0.0, None)
        support = np.flatnonzero(x > 1e-14 * scale)
        _, sv, vt = np.linalg.svd(A_red[:, support])
        rank = int((sv > sv[0] * max(A_red.shape) * 1e-12).sum()) if sv.size else 0
        null = vt[rank:].T.copy()
        alive = np.ones(support.size, dtype=bool)
        while null.shape[1]:
            v = null[:, 0]
            if not (v < -1e-12).any():
                v = -v
            neg = np.flatnonzero((v < -1e-12) & alive)
            steps = x[support[neg]] / -v[neg]
            k = neg[np.argmin(steps)]
            x[support] += steps.min() * v
            x[support[k]] = 0.0
            alive[k] = False
            null = null[:, 1:] - np.outer(v, null[k, 1:] / v[k])
        x = np.clip(x, 0.0, None)

        chosen = list(support[alive])
        order = chosen + [j for j in range(A.shape[1]) if j not in set(chosen)]
        basis = np.array(order)[_independent(A_red[:, order], limit=A_red.shape[0])]
        if basis.size != A_red.shape[0]:
            raise LpInfeasible("could not complete a basis from the start point")
        self._A, self._b = A_red, b_red
        self.basis = basis
        self.redundant_rows = int((~keep).sum())

    def _pivot(self, T, rhs, r, j):
        piv = T[r, j]
        T[r] /= piv
        rhs[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        rhs -= col * rhs[r]
        self.pivots += 1
        return T, rhs

    def _optimise(self, T, rhs, basis, cost):
        """Simplex on tableau ``T`` (already B^-1 A) from basis ``basis``.

        Dantzig pricing, switching to Bland's rule after a run of degenerate
        pivots so that cycling cannot occur.
        """
        scale = max(1.0, np.abs(cost).max())
        degenerate_run = 0
        for _ in range(self.max_pivots):
            reduced = cost - cost[basis] @ T
            reduced[basis] = 0.0
            entering = np.flatnonzero(reduced < -COST_TOL * scale)
            if entering.size == 0:
                return T, rhs, basis
            if degenerate_run >= BLAND_AFTER:
                j = entering[0]
            else:
                j = entering[np.argmin(reduced[entering])]
            col = T[:, j]
            rows = np.flatnonzero(col > PIVOT_TOL)
            if rows.size == 0:
                raise LpUnbounded(f"column {j} is an unbounded direction")
            ratios = np.clip(rhs[rows], 0.0, None) / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, best)]
            r = ties[np.argmin(basis[ties])]
            degenerate_run = degenerate_run + 1 if best <= 1e-14 else 0
            T, rhs = self._pivot(T, rhs, r, j)
            basis[r] = j
        raise RuntimeError("simplex pivot limit reached")

    def solve(self, c):
        """Minimise ``c^T x`` over the polytope; returns (x, value)."""
        c = np.asarray(c, dtype=float).reshape(-1)
        if c.size != self.n_vars:
            raise ValueError(f"cost has length {c.size}, expected {self.n_vars}")
        # Refactor from the original data to keep round-off from accumulating.
        B = self._A[:, self.basis]
        T = np.linalg.solve(B, self._A)
        rhs = np.linalg.solve(B, self._b)
        T, rhs, basis = self._optimise(T, rhs, self.basis.copy(), c)
        self.basis = basis
        x = np.zeros(self.n_vars)
        x[basis] = np.clip(rhs, 0.0, None)
        return x, float(c @ x)


def linprog_eq(c, A, b):
    """One-shot ``min c^T x, A x = b, x >= 0``; returns (x, value)."""
    return DenseSimplex(A, b).solve(c)


def _independent(M, limit=None, tol=1e-9):
    """Indices of a greedy maximal independent subset of the columns of M."""
    Q = np.zeros((M.shape[0], 0))
    picked = []
    for j in range(M.shape[1]):
        col = M[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        resid = col - Q @ (Q.T @ col)
        resid -= Q @ (Q.T @ resid)
        rn = np.linalg.norm(resid)
        if rn > tol * norm:
            Q = np.column_stack([Q, resid / rn])
            picked.append(j)
            if limit is not None and len(picked) == limit:
                break
    return np.array(picked, dtype=int)
