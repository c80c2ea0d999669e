"""Scalar functionals on densities: entropies, distances, energies, regret.

Conventions
-----------
* Relative entropy H(mu|rho) = sum_k p_k log(p_k / q_k) in nats, 0 log 0 = 0,
  +inf when mu charges a cell rho does not.
* Total variation is the full L1 mass norm sum_k |p_k - q_k|, range [0, 2],
  so Pinsker reads tv^2 <= 2 H.
* Fisher information uses forward differences on torus edges with
  arithmetic-mean edge masses; it is a diagnostic, nothing downstream
  depends on its absolute normalization.
* The regularized regret of a profile has two equivalent forms: the closed
  form tau * sum_i H(nu^i | gibbs(A_i, tau)) and the definitional
  energy-minus-infimum form, where the infimum over densities is the log
  partition -tau log sum_k vol_k exp(-A_k / tau). Both are exposed; tests
  hold them together.

All functions are pure; MetricsRecord is an immutable snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidTemperatureError, SupportError, UnsupportedDimensionError
from .game import Game, effective_potential
from .grid import Density, PotentialField, check_same_grid, gibbs_from_potential

_KL_ROUNDOFF = 1e-10  # tiny negative sums from cancellation are clamped to 0


def relative_entropy(mu: Density, rho: Density) -> float:
    """H(mu|rho) = sum p log(p/q); +inf if mu charges a cell where rho is 0."""
    check_same_grid(mu, rho)
    p = mu.mass
    q = rho.mass
    pos = p > 0
    if np.any(q[pos] <= 0):
        return math.inf
    val = float(np.sum(p[pos] * np.log(p[pos] / q[pos])))
    if val < 0:
        if val < -_KL_ROUNDOFF:
            raise AssertionError(f"relative entropy came out {val}; inputs violate invariants")
        val = 0.0
    return val


def lebesgue_entropy(mu: Density) -> float:
    """Entropy relative to Lebesgue on the torus: sum p log(p / vol). Zero for uniform."""
    p = mu.mass
    pos = p > 0
    return float(np.sum(p[pos] * np.log(p[pos] / mu.grid.cell_volume)))


def fisher_information(mu: Density, rho: Density) -> float:
    """Discrete I(mu|rho): sum over torus edges of ((log r_next - log r)/h)^2 * edge mass.

    r = p/q cellwise; the edge mass is the arithmetic mean (p_k + p_next)/2;
    dimensions contribute independently. Both densities must be strictly
    positive.
    """
    check_same_grid(mu, rho)
    if not (mu.is_strictly_positive() and rho.is_strictly_positive()):
        raise SupportError("fisher_information needs strictly positive densities")
    g = mu.grid
    logr = g.shaped(np.log(mu.mass / rho.mass))
    p = g.shaped(mu.mass)
    h = g.spacing
    total = 0.0
    for axis in range(g.dim):
        dlog = (np.roll(logr, -1, axis=axis) - logr) / h
        w = 0.5 * (p + np.roll(p, -1, axis=axis))
        total += float(np.sum(dlog * dlog * w))
    return total


def tv_distance(mu: Density, rho: Density) -> float:
    """Full L1 mass norm sum |p - q|, in [0, 2]."""
    check_same_grid(mu, rho)
    return float(np.abs(mu.mass - rho.mass).sum())


def w1_circle(mu: Density, rho: Density) -> float:
    """Exact 1-Wasserstein distance on the unit circle (1-d grids only).

    min over c of h * sum_k |F_mu(k) - F_rho(k) - c| with F the cumulative
    sums; the optimal c is the median of the CDF difference.
    """
    check_same_grid(mu, rho)
    if mu.grid.dim != 1:
        raise UnsupportedDimensionError("w1_circle is defined for 1-d grids only")
    d = np.cumsum(mu.mass - rho.mass)
    c = np.median(d)
    return float(mu.grid.spacing * np.abs(d - c).sum())


def energy(game: Game, i: int, profile: Sequence[Density], tau: float | None = None) -> float:
    """Expected loss of player i, <U_i * nu^{-i}, nu^i>; tau adds tau * H(nu^i)."""
    a = effective_potential(game, i, profile)
    val = float(a.value @ profile[i].mass)
    if tau is not None:
        if tau <= 0:
            raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
        val += tau * lebesgue_entropy(profile[i])
    return val


def entropic_min_value(field: PotentialField, tau: float) -> float:
    """inf over densities of <A, mu> + tau H(mu): the log partition -tau log sum vol e^(-A/tau)."""
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    a = field.value
    m = a.min()
    z = np.sum(field.grid.cell_volume * np.exp(-(a - m) / tau))
    return float(m - tau * math.log(z))


def ni_regularized(game: Game, tau: float, profile: Sequence[Density]) -> float:
    """Regularized regret tau * sum_i H(nu^i | gibbs(A_i, tau)); zero exactly at the fixed point."""
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    total = 0.0
    for i in range(game.num_players):
        a = effective_potential(game, i, profile)
        total += relative_entropy(profile[i], gibbs_from_potential(a, tau))
    return tau * total


def ni_regularized_definitional(game: Game, tau: float, profile: Sequence[Density]) -> float:
    """Same regret via energies: sum_i [E_{i,tau}(nu) - inf_mu E_{i,tau}(mu, nu^{-i})].

    Kept as an independent second route; tests require agreement with
    ni_regularized to 1e-10.
    """
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    total = 0.0
    for i in range(game.num_players):
        a = effective_potential(game, i, profile)
        val = float(a.value @ profile[i].mass) + tau * lebesgue_entropy(profile[i])
        total += val - entropic_min_value(a, tau)
    return total


def ni_unregularized(game: Game, profile: Sequence[Density]) -> float:
    """Plain regret sum_i [<A_i, nu^i> - min_k A_i(k)].

    The infimum of a linear functional over densities is attained at a
    point mass on the grid, hence the min over cells.
    """
    total = 0.0
    for i in range(game.num_players):
        a = effective_potential(game, i, profile)
        # each bracket is >= 0 up to roundoff (mean over cells vs min)
        total += max(0.0, float(a.value @ profile[i].mass) - float(a.value.min()))
    return total


@dataclass(frozen=True)
class MetricsRecord:
    """One time-sample row of a run.

    tv_to_star entries are NaN when no equilibrium reference was supplied.
    CSV column order is fixed: t, tau, alpha, s_t, ni_tau, ni, then one
    (tv_to_star_i, h_nu_rho_i, h_hat_rho_i) block per player.
    """

    t: float
    tau: float
    alpha: float
    s_t: float
    ni_tau: float
    ni: float
    tv_to_star: tuple
    h_nu_rho: tuple
    h_hat_rho: tuple

    def __post_init__(self):
        if self.s_t < 0 or self.ni_tau < 0 or self.ni < -1e-12:
            raise ValueError("entropy and regret fields must be nonnegative")
        for tv in self.tv_to_star:
            if not math.isnan(tv) and not (0.0 <= tv <= 2.0):
                raise ValueError(f"tv value {tv} outside [0, 2]")

    @staticmethod
    def csv_header(num_players: int) -> list[str]:
        cols = ["t", "tau", "alpha", "s_t", "ni_tau", "ni"]
        for i in range(1, num_players + 1):
            cols += [f"tv_to_star_{i}", f"h_nu_rho_{i}", f"h_hat_rho_{i}"]
        return cols

    def to_csv_row(self) -> list[str]:
        vals = [self.t, self.tau, self.alpha, self.s_t, self.ni_tau, self.ni]
        for tv, hn, hh in zip(self.tv_to_star, self.h_nu_rho, self.h_hat_rho):
            vals += [tv, hn, hh]
        return [repr(float(v)) for v in vals]


def lyapunov(
    game: Game,
    tau: float,
    state,
    alpha: float = math.nan,
    star: Sequence[Density] | None = None,
) -> MetricsRecord:
    """Full metrics snapshot of a dynamics state at temperature tau.

    The moving targets rho^i are the Gibbs responses to the time-averaged
    (hat) opponents; s_t sums H(nu^i|rho^i) + H(hat nu^i|rho^i) over
    players, and ni_tau = tau * sum_i H(hat nu^i|rho^i) is the regularized
    regret of the averaged profile. ni is the unregularized regret of the
    instantaneous profile. star, when given, fills per-player TV distances
    of nu to it.
    """
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    nu = list(state.nu)
    hat = list(state.nu_hat)
    K = game.num_players
    h_nu = []
    h_hat = []
    for i in range(K):
        rho_i = gibbs_from_potential(effective_potential(game, i, hat), tau)
        h_nu.append(relative_entropy(nu[i], rho_i))
        h_hat.append(relative_entropy(hat[i], rho_i))
    if star is None:
        tv = [math.nan] * K
    else:
        tv = [tv_distance(nu[i], star[i]) for i in range(K)]
    return MetricsRecord(
        t=float(state.t),
        tau=float(tau),
        alpha=float(alpha),
        s_t=float(sum(h_nu) + sum(h_hat)),
        ni_tau=float(tau * sum(h_hat)),
        ni=float(ni_unregularized(game, nu)),
        tv_to_star=tuple(tv),
        h_nu_rho=tuple(h_nu),
        h_hat_rho=tuple(h_hat),
    )
