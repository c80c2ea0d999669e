"""Regularized mixed equilibria via damped best-response iteration.

The equilibrium of the entropy-regularized game is the unique profile
where every player's density equals the Gibbs response to the others,
nu^i = gibbs(U_i * nu^{-i}, tau). A damped Jacobi sweep

    nu^i <- (1 - gamma) nu^i + gamma gibbs(U_i * nu^{-i}, tau)

updates all players simultaneously against the frozen iterate, keeping
player-relabeling equivariance (Gauss-Seidel would not) and damping out
the oscillations that near-antisymmetric responses produce. Iterations
are sequential; distinct solves are independent and reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidTemperatureError
from .game import Game, GameConstants, effective_potential
from .grid import Density, gibbs_from_potential, uniform_density
from .metrics import tv_distance


@dataclass(frozen=True)
class FixedPointReport:
    """Result of solve_fixed_point; converged implies final_residual <= tol."""

    densities: tuple
    iterations: int
    final_residual: float
    converged: bool


def best_response(game: Game, tau: float, i: int, others: Sequence[Density]) -> Density:
    """Gibbs response of player i: the unique minimizer of the regularized loss."""
    return gibbs_from_potential(effective_potential(game, i, others), tau)


def solve_fixed_point(
    game: Game,
    tau: float,
    damping: float = 0.5,
    tol: float = 1e-11,
    max_iter: int = 20000,
    init: Sequence[Density] | None = None,
) -> FixedPointReport:
    """Damped Jacobi iteration to the regularized equilibrium.

    The residual is max_i tv(nu^i, response_i) evaluated at the current
    iterate, before the damped update. Non-convergence within max_iter
    returns a report with converged=False rather than raising.
    """
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    if not (0.0 < damping <= 1.0):
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    K = game.num_players
    if init is None:
        current = [uniform_density(g) for g in game.grids]
    else:
        current = list(init)
        if len(current) != K:
            raise ValueError(f"init needs {K} densities, got {len(current)}")

    residual = math.inf
    for it in range(max_iter):
        responses = [best_response(game, tau, i, current) for i in range(K)]
        residual = max(tv_distance(current[i], responses[i]) for i in range(K))
        if residual <= tol:
            return FixedPointReport(tuple(current), it, residual, True)
        current = [
            Density(game.grids[i],
                    (1.0 - damping) * current[i].mass + damping * responses[i].mass)
            for i in range(K)
        ]
    return FixedPointReport(tuple(current), max_iter, residual, False)


def epsilon_for_tau(
    constants: GameConstants,
    dims: Sequence[int],
    tau: float,
    beta: float,
) -> float:
    """Regret level certified for the regularized equilibrium at small tau.

    Returns eps = beta * tau * ln(1/tau), valid for tau in (0, 1) with
    beta at least max(dims) + 1. The game constants enter the underlying
    guarantee only through an unspecified threshold on tau, so they are
    accepted for interface completeness but not used in the formula.
    """
    del constants
    if not (0.0 < tau < 1.0):
        raise InvalidTemperatureError(
            f"the regret rule needs tau in (0, 1); got {tau} (log(1/tau) would be nonpositive)"
        )
    floor = max(dims) + 1
    if beta < floor:
        raise ValueError(f"beta must be at least max(dims) + 1 = {floor}, got {beta}")
    return beta * tau * math.log(1.0 / tau)
