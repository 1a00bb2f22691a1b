"""Levenberg-Marquardt minimization of sums of squared residuals.

Hand-rolled rather than delegated: callers need the accepted-cost
sequence, per-stage iteration counts and an explicit converged flag,
and the elastic stage feeds a sparse Jacobian. Marquardt scaling
(damping proportional to diag(J^T J)) keeps steps sane across
differently scaled parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


@dataclass
class LMResult:
    params: np.ndarray
    cost_history: list  # cost after each accepted step, starting at the initial cost
    iterations: int
    converged: bool
    final_cost: float = field(init=False)

    def __post_init__(self):
        self.final_cost = float(self.cost_history[-1])


def _solve_normal_equations(jac, residuals, mu):
    if sp.issparse(jac):
        jtj = (jac.T @ jac).tocsr()
        diag = jtj.diagonal()
        floor = max(diag.max(), 1.0) * 1e-12
        damped = jtj + sp.diags(mu * np.maximum(diag, floor))
        rhs = -jac.T @ residuals
        return spsolve(damped.tocsc(), rhs)
    jtj = jac.T @ jac
    diag = np.diag(jtj).copy()
    floor = max(diag.max(), 1.0) * 1e-12
    damped = jtj + np.diag(mu * np.maximum(diag, floor))
    rhs = -jac.T @ residuals
    return np.linalg.solve(damped, rhs)


def levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], object],
    x0: Sequence[float],
    max_iter: int = 50,
    rel_tol: float = 1e-6,
    mu_init: float = 1e-3,
    mu_decrease: float = 3.0,
    mu_increase: float = 4.0,
    mu_max: float = 1e8,
    abs_tol: float = 0.0,
) -> LMResult:
    """Minimize sum(residual_fn(x)**2).

    One iteration = one linearization: the Jacobian is evaluated once,
    then the damping is raised until a downhill step is found (rejected
    probes reuse the same Jacobian). Accepted steps never increase the
    cost. ``converged`` is True when the relative cost decrease of an
    accepted step falls below ``rel_tol``, the cost falls to ``abs_tol``
    or below (exact fit: a pure relative test never triggers while the
    cost decays geometrically toward zero), or no damping up to
    ``mu_max`` yields a downhill step (stationary to working precision);
    it is False only when the iteration budget runs out while steps were
    still improving.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    cost = float(r @ r)
    history = [cost]
    mu = mu_init
    converged = cost <= abs_tol
    iterations = 0

    while not converged and iterations < max_iter:
        iterations += 1
        jac = jacobian_fn(x)

        accepted = False
        while mu <= mu_max:
            try:
                step = _solve_normal_equations(jac, r, mu)
            except np.linalg.LinAlgError:
                mu *= mu_increase
                continue
            x_new = x + step
            r_new = residual_fn(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                accepted = True
                break
            mu *= mu_increase

        if not accepted:
            converged = True
            break

        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        mu = max(mu / mu_decrease, 1e-12)
        if rel_drop < rel_tol or cost <= abs_tol:
            converged = True
            break

    return LMResult(params=x, cost_history=history, iterations=iterations, converged=converged)
