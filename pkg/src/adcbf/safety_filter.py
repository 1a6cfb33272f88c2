"""Barrier candidates, constraint-row builders, and a dense active-set QP.

Every controller variant reduces to the same shape: affine inequality rows
``a @ u <= b`` in the input, plus a minimum-deviation cost ``|u - u_nom|^2``.
The row builders differ only in how much model error they hedge against: the
adaptive rows carry a parameter-error margin scaled by the regressor norm,
the robust rows a worst-case disturbance bound, and the nominal rows nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ConstraintRow:
    """One affine input constraint ``a @ u <= b``."""

    a: np.ndarray
    b: float
    tag: str = "adcbf"

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))


class BarrierCandidate:
    """Vector-valued barrier: safe set is where every component is <= 0.

    ``gamma`` limits the worst-case growth of each component; by default it
    is a linear gain on the barrier value itself.
    """

    def __init__(
        self,
        dim: int,
        value_fn: Callable[[np.ndarray], np.ndarray],
        grad_fn: Callable[[np.ndarray], np.ndarray],
        gamma_fn: Callable[[np.ndarray], np.ndarray] | None = None,
        gamma_gain: float = 1.0,
    ):
        self.dim = int(dim)
        self._value = value_fn
        self._grad = grad_fn
        self.gamma_gain = float(gamma_gain)
        self._gamma = gamma_fn

    def value(self, x) -> np.ndarray:
        return np.asarray(self._value(np.asarray(x, dtype=float)), dtype=float).reshape(self.dim)

    def grad(self, x) -> np.ndarray:
        g = np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float)
        if self.dim == 0:
            return g.reshape(0, g.shape[-1] if g.ndim == 2 else np.asarray(x).size)
        return g.reshape(self.dim, -1)

    def gamma(self, x) -> np.ndarray:
        if self._gamma is not None:
            return np.asarray(self._gamma(x), dtype=float).reshape(self.dim)
        return self.gamma_gain * self.value(x)

    def contains(self, x) -> bool:
        return bool(np.all(self.value(x) <= 0.0))


class AffineBarrier(BarrierCandidate):
    """Barrier of the form ``B(x) = G x + h`` (polytopic safe set)."""

    def __init__(self, G, h, gamma_gain: float = 1.0):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        h = np.asarray(h, dtype=float).reshape(-1)
        if h.size != G.shape[0]:
            raise ValueError("offset length must match the number of barrier rows")
        self.G, self.h = G, h
        super().__init__(
            dim=G.shape[0],
            value_fn=lambda x: self.G @ x + self.h,
            grad_fn=lambda x: self.G,
            gamma_gain=gamma_gain,
        )


def build_adcbf_rows(
    x,
    barrier: BarrierCandidate,
    phi: np.ndarray,
    phi_prime: np.ndarray,
    g_of_x: np.ndarray,
    chi: float,
    c_1: float,
) -> list[ConstraintRow]:
    """Adaptive constraint rows with a parameter-error margin.

    ``phi`` is the drift estimate at the current weights and ``phi_prime``
    the weight Jacobian; the hedge per row is the Euclidean norm of the row's
    projected regressor times ``chi + c_1``.
    """
    if chi < 0 or c_1 < 0:
        raise ValueError("chi and c_1 must be non-negative")
    phi = np.asarray(phi, dtype=float).reshape(-1)
    phi_prime = np.atleast_2d(np.asarray(phi_prime, dtype=float))
    g_of_x = np.atleast_2d(np.asarray(g_of_x, dtype=float))
    grads = barrier.grad(x)
    gammas = barrier.gamma(x)
    rows = []
    for i in range(barrier.dim):
        gi = grads[i]
        margin = float(np.linalg.norm(gi @ phi_prime)) * (chi + c_1)
        rows.append(
            ConstraintRow(g_of_x.T @ gi, -gammas[i] - float(gi @ phi) - margin, tag="adcbf")
        )
    return rows


def build_robust_rows(
    x,
    barrier: BarrierCandidate,
    f_model: np.ndarray,
    delta_bar: float,
    g_of_x: np.ndarray,
    channel: np.ndarray | None = None,
) -> list[ConstraintRow]:
    """Worst-case rows: model drift plus a disturbance ball of radius delta_bar.

    ``channel`` maps the disturbance into the state equation (identity by
    default); the per-row margin is the norm of the gradient seen through
    that channel, so structured disturbances are not over-hedged.
    """
    if delta_bar < 0:
        raise ValueError("delta_bar must be non-negative")
    f_model = np.asarray(f_model, dtype=float).reshape(-1)
    g_of_x = np.atleast_2d(np.asarray(g_of_x, dtype=float))
    grads = barrier.grad(x)
    gammas = barrier.gamma(x)
    if channel is None:
        channel = np.eye(f_model.size)
    channel = np.atleast_2d(np.asarray(channel, dtype=float))
    rows = []
    for i in range(barrier.dim):
        gi = grads[i]
        margin = float(np.linalg.norm(gi @ channel)) * delta_bar
        rows.append(
            ConstraintRow(g_of_x.T @ gi, -gammas[i] - float(gi @ f_model) - margin, tag="robust")
        )
    return rows


def build_nominal_rows(x, barrier: BarrierCandidate, f_model, g_of_x) -> list[ConstraintRow]:
    """Certainty-equivalent rows using the (possibly wrong) model drift."""
    rows = build_robust_rows(x, barrier, f_model, 0.0, g_of_x)
    return [ConstraintRow(r.a, r.b, tag="nominal") for r in rows]


@dataclass
class QpProblem:
    """Minimum-deviation program: min |u - u_nom|^2 subject to rows and box."""

    u_nom: np.ndarray
    rows: Sequence[ConstraintRow]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.u_nom = np.asarray(self.u_nom, dtype=float).reshape(-1)
        if self.lb is not None:
            self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), self.u_nom.shape).copy()
        if self.ub is not None:
            self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), self.u_nom.shape).copy()


@dataclass
class QpSolution:
    u_star: np.ndarray
    active_set: tuple[int, ...]
    kkt_residual: float
    multipliers: dict[int, float] = field(default_factory=dict)


class QpInfeasibleError(RuntimeError):
    """No input satisfies every row; carries a least-infeasible fallback.

    ``violation`` is the max of ``a @ u - b`` over all rows at ``u_best``,
    the minimizer of the squared total violation.
    """

    def __init__(self, violation: float, u_best: np.ndarray):
        super().__init__(f"QP infeasible; minimal max violation {violation:.6g}")
        self.violation = float(violation)
        self.u_best = np.asarray(u_best, dtype=float)


def _stacked(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All constraints as columns of A with offsets b (box bounds appended)."""
    m = problem.u_nom.size
    cols, offs = [], []
    for r in problem.rows:
        if r.a.size != m:
            raise ValueError(f"constraint row has {r.a.size} coefficients, input has {m}")
        cols.append(r.a)
        offs.append(r.b)
    if problem.ub is not None:
        for i in range(m):
            e = np.zeros(m)
            e[i] = 1.0
            cols.append(e)
            offs.append(problem.ub[i])
    if problem.lb is not None:
        for i in range(m):
            e = np.zeros(m)
            e[i] = -1.0
            cols.append(e)
            offs.append(-problem.lb[i])
    if not cols:
        return np.zeros((m, 0)), np.zeros(0)
    return np.column_stack(cols), np.asarray(offs)


def _least_infeasible(A: np.ndarray, b: np.ndarray, u_nom: np.ndarray) -> np.ndarray:
    """Minimize the squared total violation (tiny pull toward u_nom breaks ties)."""
    mu = 1e-9
    u = u_nom.copy()
    for _ in range(100):
        viol = A.T @ u - b
        act = viol > 0
        Av = A[:, act]
        H = Av @ Av.T + mu * np.eye(u.size)
        rhs = Av @ b[act] + mu * u_nom
        u_new = np.linalg.solve(H, rhs)
        if np.allclose(u_new, u, rtol=0, atol=1e-12):
            u = u_new
            break
        u = u_new
    return u


def qp_solve(problem: QpProblem, feas_tol: float = 1e-9) -> QpSolution:
    """Dense active-set solve of the minimum-deviation QP.

    Starts from the unconstrained optimum ``u_nom`` and adds violated rows
    one at a time (dual active-set iteration), so a feasible ``u_nom`` is
    returned unchanged.  Raises :class:`QpInfeasibleError` when the rows are
    inconsistent; the error carries the least-infeasible input so callers can
    degrade gracefully.  Active-set indices refer to ``problem.rows`` first,
    then upper-bound rows, then lower-bound rows.
    """
    u_nom = problem.u_nom
    A, b = _stacked(problem)
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(u_nom)):
        raise ValueError("QP data must be finite")
    n_rows = A.shape[1]
    tol = feas_tol * np.maximum(1.0, np.abs(b)) if n_rows else np.zeros(0)

    u = u_nom.copy()
    work: list[int] = []
    lam: list[float] = []

    if n_rows == 0 or np.all(A.T @ u - b <= tol):
        return QpSolution(u, (), 0.0, {})

    max_outer = 50 * (n_rows + 1)
    for _ in range(max_outer):
        viol = A.T @ u - b
        k = int(np.argmax(viol - tol))
        if viol[k] <= tol[k]:
            break
        n_plus = A[:, k]
        lam_k = 0.0
        for _ in range(max_outer):
            if work:
                Aw = A[:, work]
                r, *_ = np.linalg.lstsq(Aw, n_plus, rcond=None)
                z = n_plus - Aw @ r
            else:
                r = np.zeros(0)
                z = n_plus.copy()
            z_norm2 = float(z @ z)
            if z_norm2 <= 1e-24 * max(1.0, float(n_plus @ n_plus)):
                # New normal lies in the span of the active ones.
                if r.size == 0 or np.all(r <= 1e-12):
                    u_best = _least_infeasible(A, b, u_nom)
                    raise QpInfeasibleError(float(np.max(A.T @ u_best - b)), u_best)
                steps = [(lam[j] / r[j], j) for j in range(len(work)) if r[j] > 1e-12]
                t, j_drop = min(steps)
                lam = [lj - t * rj for lj, rj in zip(lam, r)]
                lam_k += t
                del work[j_drop], lam[j_drop]
                continue
            t_full = (float(n_plus @ u) - b[k]) / z_norm2
            steps = [(lam[j] / r[j], j) for j in range(len(work)) if r[j] > 1e-12]
            t_drop, j_drop = min(steps) if steps else (np.inf, -1)
            t = min(t_full, t_drop)
            u = u - t * z
            lam = [lj - t * rj for lj, rj in zip(lam, r)]
            lam_k += t
            if t_drop < t_full:
                del work[j_drop], lam[j_drop]
                continue
            work.append(k)
            lam.append(lam_k)
            break
    else:
        raise RuntimeError("active-set iteration failed to converge")

    # KKT residual: stationarity, primal feasibility, complementary slackness.
    grad = u - u_nom
    for j, lj in zip(work, lam):
        grad = grad + lj * A[:, j]
    slack = b - A.T @ u
    lam_full = np.zeros(n_rows)
    lam_full[work] = lam
    kkt = max(
        float(np.max(np.abs(grad))) if grad.size else 0.0,
        float(np.max(A.T @ u - b)) if n_rows else 0.0,
        float(np.max(np.abs(lam_full * slack))) if n_rows else 0.0,
    )
    active = tuple(sorted(j for j, lj in zip(work, lam) if lj > 1e-12))
    return QpSolution(u, active, kkt, {j: float(lj) for j, lj in zip(work, lam)})
