"""Interacting Langevin particles approximating the mean-field flow.

Each player carries N particles on its torus plus a discounted histogram
standing in for the time-averaged density. One step:

  1. drift: every particle of player i moves along minus the gradient of
     the effective potential built from the *other* players' discounted
     histograms (central differences of the potential table, linearly
     interpolated at the particle position);
  2. noise: add sqrt(2 tau dt) * standard normal per coordinate, wrap
     into [0, 1);
  3. average: hat_hist^i <- e^(-alpha dt) hat_hist^i +
     (1 - e^(-alpha dt)) * empirical histogram of the new positions,
     literally the same update the PDE integrator applies.

Routing the interaction through the histogram instead of pairwise sums
costs O(N + n) per step instead of O(N^2) and reuses the tabulated
kernels. Randomness comes from one counter-based stream per player, so
same seed means bit-identical trajectories regardless of how position
updates are parallelized; langevin_step returns a new ensemble but
advances those streams in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .game import Game
from .grid import Density, TorusGrid, smoothed
from .metrics import MetricsRecord, lyapunov
from .dynamics import DynamicsState, IntegratorConfig, averaging_step

HISTOGRAM_SMOOTHING = 1e-9  # additive mass per cell before entropy metrics


@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions, discounted histograms and RNG streams for all players."""

    grids: tuple
    positions: tuple       # per player: (N, d_i) array in [0, 1)
    hat_hist: tuple        # per player: Density
    rngs: tuple            # per player: np.random.Generator (counter-based)
    seed: int

    @property
    def num_players(self) -> int:
        return len(self.grids)

    @property
    def particles_per_player(self) -> int:
        return self.positions[0].shape[0]


def _player_rng(seed: int, player: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, player])))


def _cell_indices(grid: TorusGrid, pos: np.ndarray) -> np.ndarray:
    # positions live in [0, 1), so int truncation of pos * n is the floor
    n = grid.points_per_dim
    idx = (pos * n).astype(np.int64)
    np.minimum(idx, n - 1, out=idx)
    if grid.dim == 1:
        return idx[:, 0]
    return idx[:, 0] * n + idx[:, 1]


def histogram(grid: TorusGrid, pos: np.ndarray) -> Density:
    counts = np.bincount(_cell_indices(grid, pos), minlength=grid.cell_count)
    return Density(grid, counts / pos.shape[0])


def init_particles(
    grids: Sequence[TorusGrid],
    N: int,
    init: Sequence[Density],
    seed: int,
) -> ParticleEnsemble:
    """Sample N particles per player i.i.d. from the given cell masses.

    Cells are drawn by inverse CDF of the masses and particles are placed
    at the cell centers; a point-mass init therefore puts every particle
    at that center. Hat histograms start as the empirical histogram of
    the sampled positions.
    """
    if N < 1:
        raise ValueError("need at least one particle per player")
    grids = tuple(grids)
    if len(init) != len(grids):
        raise ValueError("need one init density per player")
    positions = []
    rngs = []
    for i, g in enumerate(grids):
        if init[i].grid != g:
            raise ValueError(f"init density {i} lives on the wrong grid")
        rng = _player_rng(seed, i)
        cdf = np.cumsum(init[i].mass)
        cdf[-1] = 1.0
        cells = np.searchsorted(cdf, rng.random(N), side="right")
        pos = g.cell_centers[cells].copy()
        positions.append(pos)
        rngs.append(rng)
    hats = tuple(histogram(g, positions[i]) for i, g in enumerate(grids))
    return ParticleEnsemble(
        grids=grids,
        positions=tuple(positions),
        hat_hist=hats,
        rngs=tuple(rngs),
        seed=seed,
    )


def _gradient_tables(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Central-difference gradient of a cell table, shape (dim,) + spatial."""
    a = grid.shaped(values)
    h = grid.spacing
    return np.stack([
        (np.roll(a, -1, axis=ax) - np.roll(a, 1, axis=ax)) / (2.0 * h)
        for ax in range(grid.dim)
    ])


def _interp_weights(grid: TorusGrid, pos: np.ndarray):
    """Lower cell index (may be -1, wrapped by take) and weight per axis."""
    n = grid.points_per_dim
    s = pos * n - 0.5
    k0 = np.floor(s).astype(np.int64)
    return k0, s - k0


def _interp_periodic(table: np.ndarray, k0: np.ndarray, w: np.ndarray, dim: int) -> np.ndarray:
    """Linear interpolation of a cell-center table at torus points, given
    the precomputed lower indices and weights from _interp_weights."""
    if dim == 1:
        i0 = k0[:, 0]
        w0 = w[:, 0]
        return (1.0 - w0) * table.take(i0, mode="wrap") + w0 * table.take(i0 + 1, mode="wrap")
    n = table.shape[0]
    i0 = k0[:, 0] % n
    i1 = (i0 + 1) % n
    j0 = k0[:, 1] % n
    j1 = (j0 + 1) % n
    wx = w[:, 0]
    wy = w[:, 1]
    return ((1 - wx) * (1 - wy) * table[i0, j0] + wx * (1 - wy) * table[i1, j0]
            + (1 - wx) * wy * table[i0, j1] + wx * wy * table[i1, j1])


def langevin_step(
    ensemble: ParticleEnsemble, game: Game, tau: float, alpha: float, dt: float
) -> ParticleEnsemble:
    """One Euler-Maruyama step for every player against frozen hat histograms."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if tau < 0:
        raise ValueError("temperature must be nonnegative")
    K = ensemble.num_players
    hats = list(ensemble.hat_hist)
    new_positions = []
    for i in range(K):
        g = ensemble.grids[i]
        v = np.zeros(g.cell_count)
        for j, table in game.opponents(i):
            v += table @ hats[j].mass
        grad = _gradient_tables(g, v)
        pos = ensemble.positions[i]
        k0, w = _interp_weights(g, pos)
        drift = np.stack(
            [-_interp_periodic(grad[ax], k0, w, g.dim) for ax in range(g.dim)], axis=1
        )
        new = pos + drift * dt
        if tau > 0:
            noise = ensemble.rngs[i].standard_normal(pos.shape)
            new += math.sqrt(2.0 * tau * dt) * noise
        new_positions.append(np.mod(new, 1.0))
    new_hats = tuple(
        averaging_step(hats[i], histogram(ensemble.grids[i], new_positions[i]), alpha, dt)
        for i in range(K)
    )
    return ParticleEnsemble(
        grids=ensemble.grids,
        positions=tuple(new_positions),
        hat_hist=new_hats,
        rngs=ensemble.rngs,
        seed=ensemble.seed,
    )


def run_particles(
    game: Game,
    schedule,
    config: IntegratorConfig,
    ensemble: ParticleEnsemble,
    star: Sequence[Density] | None = None,
    observer: Callable | None = None,
) -> list[MetricsRecord]:
    """Drive the particle system on a schedule and emit histogram metrics.

    Records mirror the PDE runner's: nu is the current empirical histogram,
    hat the discounted one, both smoothed by HISTOGRAM_SMOOTHING additive
    mass (and renormalized) so empty cells do not blow up the entropies.
    """
    records: list[MetricsRecord] = []
    current = ensemble

    def emit(t_now: float, tau: float, alpha: float):
        nu = tuple(
            smoothed(histogram(current.grids[i], current.positions[i]), HISTOGRAM_SMOOTHING)
            for i in range(current.num_players)
        )
        hat = tuple(smoothed(h, HISTOGRAM_SMOOTHING) for h in current.hat_hist)
        state = DynamicsState(t=t_now, nu=nu, nu_hat=hat)
        records.append(lyapunov(game, tau, state, alpha=alpha, star=star))
        if observer is not None:
            observer(current, state)

    t = 0.0
    emit(t, schedule.tau_at(0.0), schedule.alpha_at(0.0))
    next_record = config.record_every
    while t < config.t_end - 1e-12:
        dt = min(config.dt, config.t_end - t)
        tau = schedule.tau_at(t)
        alpha = schedule.alpha_at(t)
        current = langevin_step(current, game, tau, alpha, dt)
        t += dt
        if t >= next_record - 1e-9 or t >= config.t_end - 1e-12:
            emit(t, schedule.tau_at(t), schedule.alpha_at(t))
            while next_record <= t + 1e-9:
                next_record += config.record_every
    return records


# ---------------------------------------------------------------------------
# binary position snapshots: int64 K, then per player int64 N, int64 d,
# then N*d float64 coordinates (row-major), little-endian.


def save_positions(ensemble: ParticleEnsemble, path) -> None:
    with open(path, "wb") as fh:
        np.array([ensemble.num_players], dtype="<i8").tofile(fh)
        for i in range(ensemble.num_players):
            pos = ensemble.positions[i]
            np.array(pos.shape, dtype="<i8").tofile(fh)
            pos.astype("<f8").tofile(fh)


def load_positions(path) -> list[np.ndarray]:
    out = []
    with open(path, "rb") as fh:
        k = int(np.fromfile(fh, dtype="<i8", count=1)[0])
        for _ in range(k):
            n, d = np.fromfile(fh, dtype="<i8", count=2)
            out.append(np.fromfile(fh, dtype="<f8", count=int(n * d)).reshape(int(n), int(d)))
    return out
