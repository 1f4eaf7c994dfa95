"""Phase-one simplex for linear feasibility ``A x = b, x >= 0``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    x: np.ndarray | None
    infeasibility: float
    iterations: int


def phase_one(A, b, tol: float = 1e-7, pivot_tol: float = 1e-10, max_iter: int = 50_000) -> FeasibilityResult:
    """Minimise the sum of artificial variables with Bland's rule.

    The system is feasible when that minimum is within ``tol`` (scaled by
    ``1 + |b|_inf``). Rows are sign-flipped so the artificial start is valid.
    """
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float).reshape(-1)
    m, n = A.shape
    if b.shape[0] != m:
        raise ValueError("row count of A and b differ")
    if m == 0:
        return FeasibilityResult(True, np.zeros(n), 0.0, 0)
    neg = b < 0
    A[neg] *= -1
    b = np.where(neg, -b, b)
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    # reduced costs of the phase-one objective
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(n, n + m))
    it = 0
    while it < max_iter:
        cost = T[m, :-1]
        enter = next((j for j in range(n + m) if cost[j] < -pivot_tol), None)
        if enter is None:
            break
        col = T[:m, enter]
        pos = col > pivot_tol
        if not pos.any():
            break  # unbounded direction cannot occur for phase one; stop defensively
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + 1e-12 * max(1.0, abs(rmin)))
        leave = min(ties, key=lambda r: basis[r])
        T[leave] /= T[leave, enter]
        for r in range(m + 1):
            if r != leave and T[r, enter] != 0.0:
                T[r] -= T[r, enter] * T[leave]
        basis[leave] = enter
        it += 1
    x = np.zeros(n + m)
    for r, j in enumerate(basis):
        x[j] = T[r, -1]
    x = np.maximum(x, 0.0)
    infeas = float(x[n:].sum())
    scale = 1.0 + float(np.abs(b).max(initial=0.0))
    feasible = infeas <= tol * scale
    return FeasibilityResult(feasible, x[:n] if feasible else None, infeas, it)
