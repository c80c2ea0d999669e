"""Pairwise zero-sum games tabulated on torus grids.

A game between K players is a collection of kernels W_ij on grid_i x grid_j
for i < j; the reverse orientation is always the negated transpose,
W_ji(y, x) = -W_ij(x, y), so the total expected loss over any product
measure cancels exactly. Player i's loss is U_i(x) = sum_{j != i}
W_ij(x_i, x_j), and the effective potential against a profile of opponent
densities is the matrix-vector product (U_i * nu^{-i})(x_k) =
sum_{j != i} sum_l W_ij(x_k, y_l) p^j_l.

Kernels are tabulated at construction (not kept as closures): the
effective potential is the hot loop of every solver and integrator here,
and a tabulated kernel makes it a pure BLAS call. Games and their
constants are immutable; all functions are pure and reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import GridMismatchError
from .grid import Density, PotentialField, TorusGrid, _frozen_copy

BUILTIN_NAMES = ("zero", "shift_cosine", "separable_trig", "random_smooth")


@dataclass(frozen=True)
class PairwiseKernel:
    """Tabulated interaction W_ij over grid_i x grid_j cells, stored for i < j only."""

    player_i: int
    player_j: int
    table: np.ndarray

    def __post_init__(self):
        if not self.player_i < self.player_j:
            raise ValueError("kernels are stored for i < j only")
        object.__setattr__(self, "table", _frozen_copy(self.table))


@dataclass(frozen=True)
class GameConstants:
    """Sup-norm bounds of a game.

    m0: max_i ||U_i||_inf, evaluated as max_i sum_{j != i} ||W_ij||_inf
        (the per-pair upper-bound form; for builtin games the analytic
        value of the true sup is also recorded on the Game).
    m1: sum over players of the same per-player bound.
    m2: max_i sum_{j != i} sup of the second mixed difference
        |W(x+,y+) - W(x+,y-) - W(x-,y+) + W(x-,y-)| / (h_i h_j) over
        adjacent cell pairs; for 2-d factors the max over coordinate
        pairs is taken.
    l:  max_i sum_{j != i} sup of the central-difference gradient of
        W_ij in its first (player-i) argument.
    """

    m0: float
    m1: float
    m2: float
    l: float

    def __post_init__(self):
        if not (0 <= self.m0 <= self.m1 + 1e-12):
            raise ValueError(f"need 0 <= m0 <= m1, got m0={self.m0}, m1={self.m1}")
        if self.m2 < 0 or self.l < 0:
            raise ValueError("constants must be nonnegative")


@dataclass(frozen=True)
class Game:
    """K players, one grid each, and a kernel for every unordered pair."""

    grids: tuple
    kernels: Mapping
    label: str = "custom"
    analytic_constants: GameConstants | None = None

    def __post_init__(self):
        grids = tuple(self.grids)
        object.__setattr__(self, "grids", grids)
        K = len(grids)
        if K < 2:
            raise ValueError(f"need at least 2 players, got {K}")
        kernels = dict(self.kernels)
        for i in range(K):
            for j in range(i + 1, K):
                if (i, j) not in kernels:
                    raise ValueError(f"missing kernel for pair ({i}, {j})")
                ker = kernels[(i, j)]
                expected = (grids[i].cell_count, grids[j].cell_count)
                if ker.table.shape != expected:
                    raise ValueError(
                        f"kernel ({i},{j}) has shape {ker.table.shape}, expected {expected}"
                    )
        object.__setattr__(self, "kernels", kernels)
        # Materialize both orientations once; effective_potential reuses them.
        rows = {}
        for i in range(K):
            ops = []
            for j in range(K):
                if j == i:
                    continue
                if i < j:
                    ops.append((j, kernels[(i, j)].table))
                else:
                    ops.append((j, np.ascontiguousarray(-kernels[(j, i)].table.T)))
            rows[i] = tuple(ops)
        object.__setattr__(self, "_rows", rows)

    @property
    def num_players(self) -> int:
        return len(self.grids)

    def kernel_table(self, i: int, j: int) -> np.ndarray:
        """Table of W_ij for any ordered pair i != j (negated transpose for i > j)."""
        if i == j:
            raise ValueError("no self-interaction kernel")
        if i < j:
            return self.kernels[(i, j)].table
        return -self.kernels[(j, i)].table.T

    def opponents(self, i: int):
        """(j, table) pairs with table mapping player-j masses to player-i potential."""
        return self._rows[i]


def _resolve_profile(game: Game, i: int, others: Sequence[Density]):
    """Accept a full K-profile (entry i ignored) or the K-1 opponents in order."""
    K = game.num_players
    others = list(others)
    if len(others) == K:
        profile = others
    elif len(others) == K - 1:
        profile = others[:i] + [None] + others[i:]
    else:
        raise ValueError(f"expected {K} or {K - 1} densities, got {len(others)}")
    for j in range(K):
        if j == i:
            continue
        d = profile[j]
        if d is None:
            raise ValueError(f"missing density for player {j}")
        if d.grid != game.grids[j]:
            raise GridMismatchError(f"density for player {j} lives on {d.grid}, game has {game.grids[j]}")
    return profile


def effective_potential(game: Game, i: int, others: Sequence[Density]) -> PotentialField:
    """Potential felt by player i: value_k = sum_{j != i} sum_l W_ij(x_k, y_l) p^j_l."""
    profile = _resolve_profile(game, i, others)
    v = np.zeros(game.grids[i].cell_count)
    for j, table in game.opponents(i):
        v += table @ profile[j].mass
    return PotentialField(game.grids[i], v)


def check_pairwise_zero_sum(game: Game, densities: Sequence[Density]) -> float:
    """Total expected loss sum_i <U_i * nu^{-i}, nu^i>; zero for every product measure.

    Contract: |result| <= 1e-10 * K * m0 for any valid game, since the
    (i, j) and (j, i) contributions are exact negated transposes.
    """
    if len(densities) != game.num_players:
        raise ValueError("need one density per player")
    total = 0.0
    for i in range(game.num_players):
        a = effective_potential(game, i, densities)
        total += float(a.value @ densities[i].mass)
    return total


# ---------------------------------------------------------------------------
# builtin games


def _axis_mixed_sup(table: np.ndarray, grid_i: TorusGrid, grid_j: TorusGrid) -> float:
    """Sup over adjacent cell blocks of |second mixed difference| / (h_i h_j)."""
    ni, nj = grid_i.points_per_dim, grid_j.points_per_dim
    t = table.reshape((ni,) * grid_i.dim + (nj,) * grid_j.dim)
    best = 0.0
    for ax_i in range(grid_i.dim):
        for ax_j in range(grid_j.dim):
            axj = grid_i.dim + ax_j
            d = np.roll(t, -1, axis=ax_i) - t
            dd = np.roll(d, -1, axis=axj) - d
            best = max(best, float(np.abs(dd).max()) / (grid_i.spacing * grid_j.spacing))
    return best


def _first_grad_sup(table: np.ndarray, grid_i: TorusGrid, grid_j: TorusGrid) -> float:
    """Sup over cells of |central-difference gradient in the first argument|."""
    ni, nj = grid_i.points_per_dim, grid_j.points_per_dim
    t = table.reshape((ni,) * grid_i.dim + (nj,) * grid_j.dim)
    sq = np.zeros_like(t)
    for ax in range(grid_i.dim):
        g = (np.roll(t, -1, axis=ax) - np.roll(t, 1, axis=ax)) / (2.0 * grid_i.spacing)
        sq = sq + g * g
    return float(np.sqrt(sq.max()))


def game_constants(game: Game) -> GameConstants:
    """Grid-evaluated sup-norm constants (see GameConstants for the forms used)."""
    per_player_m0 = []
    per_player_m2 = []
    per_player_l = []
    for i in range(game.num_players):
        s0 = s2 = sl = 0.0
        for j, _ in game.opponents(i):
            table = game.kernel_table(i, j)
            s0 += float(np.abs(table).max())
            s2 += _axis_mixed_sup(table, game.grids[i], game.grids[j])
            sl += _first_grad_sup(table, game.grids[i], game.grids[j])
        per_player_m0.append(s0)
        per_player_m2.append(s2)
        per_player_l.append(sl)
    return GameConstants(
        m0=max(per_player_m0),
        m1=sum(per_player_m0),
        m2=max(per_player_m2),
        l=max(per_player_l),
    )


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def builtin_game(name: str, params: Sequence[float], grids: Sequence[TorusGrid]) -> Game:
    """Construct one of the named game families.

    zero            params ()           any K, any dims: W_ij = 0
    shift_cosine    params (a,)         K=2, d=1: W_12(x, y) = a cos(2 pi (x - y))
    separable_trig  params (a,)         K=2, d=1: W_12(x, y) = a cos(2 pi x) sin(2 pi y)
    random_smooth   params (a, seed)    any K, d in {1, 2}: seeded low-frequency
                                        Fourier mixture, |frequencies| <= 3

    Pairwise antisymmetry holds by construction: only i < j tables are
    stored, reverse views are negated transposes.
    """
    grids = tuple(grids)
    K = len(grids)
    _require(K >= 2, "need at least two grids")
    params = list(params)

    if name == "zero":
        _require(len(params) == 0, "zero game takes no parameters")
        kernels = {
            (i, j): PairwiseKernel(i, j, np.zeros((grids[i].cell_count, grids[j].cell_count)))
            for i in range(K)
            for j in range(i + 1, K)
        }
        return Game(grids, kernels, label="zero",
                    analytic_constants=GameConstants(0.0, 0.0, 0.0, 0.0))

    if name in ("shift_cosine", "separable_trig"):
        _require(len(params) == 1, f"{name} takes one parameter (amplitude)")
        _require(K == 2, f"{name} is a two-player game")
        _require(all(g.dim == 1 for g in grids), f"{name} needs 1-d strategy spaces")
        a = float(params[0])
        x = grids[0].cell_centers[:, 0]
        y = grids[1].cell_centers[:, 0]
        if name == "shift_cosine":
            table = a * np.cos(2 * np.pi * (x[:, None] - y[None, :]))
            analytic = GameConstants(
                m0=abs(a), m1=2 * abs(a),
                m2=abs(a) * 4 * np.pi ** 2, l=abs(a) * 2 * np.pi,
            )
        else:
            table = a * np.cos(2 * np.pi * x)[:, None] * np.sin(2 * np.pi * y)[None, :]
            analytic = GameConstants(
                m0=abs(a), m1=2 * abs(a),
                m2=abs(a) * 4 * np.pi ** 2, l=abs(a) * 2 * np.pi,
            )
        return Game(grids, {(0, 1): PairwiseKernel(0, 1, table)}, label=name,
                    analytic_constants=analytic)

    if name == "random_smooth":
        _require(len(params) == 2, "random_smooth takes (amplitude, seed)")
        a, seed = float(params[0]), int(params[1])
        kernels = {}
        n_terms = 6
        for i in range(K):
            for j in range(i + 1, K):
                rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i, j])))
                coeffs = rng.standard_normal(n_terms)
                phases = rng.uniform(0.0, 2 * np.pi, n_terms)
                fi = rng.integers(-3, 4, size=(n_terms, grids[i].dim))
                fj = rng.integers(-3, 4, size=(n_terms, grids[j].dim))
                xi = grids[i].cell_centers
                yj = grids[j].cell_centers
                table = np.zeros((grids[i].cell_count, grids[j].cell_count))
                for m in range(n_terms):
                    ti = 2 * np.pi * (xi @ fi[m])
                    tj = 2 * np.pi * (yj @ fj[m])
                    table += coeffs[m] * np.cos(ti[:, None] + tj[None, :] + phases[m])
                kernels[(i, j)] = PairwiseKernel(i, j, (a / n_terms) * table)
        return Game(grids, kernels, label="random_smooth")

    raise ValueError(f"unknown builtin game {name!r}; choose from {BUILTIN_NAMES}")


# ---------------------------------------------------------------------------
# custom kernel files
#
# Plain-text schema (see also the cli module and README):
#   line 1:  K d_1 n_1 d_2 n_2 ... d_K n_K
#   then for each pair i < j in ascending (i, j) order, the row-major
#   table of W_ij: cells_i lines of cells_j whitespace-separated floats.


def save_kernel_file(game: Game, path) -> None:
    with open(path, "w") as fh:
        header = [str(game.num_players)]
        for g in game.grids:
            header += [str(g.dim), str(g.points_per_dim)]
        fh.write(" ".join(header) + "\n")
        for i in range(game.num_players):
            for j in range(i + 1, game.num_players):
                for row in game.kernels[(i, j)].table:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_kernel_file(path) -> Game:
    with open(path) as fh:
        header = fh.readline().split()
        if not header:
            raise ValueError(f"{path}: empty kernel file")
        K = int(header[0])
        if len(header) != 1 + 2 * K:
            raise ValueError(f"{path}: header needs K followed by {K} (dim, n) pairs")
        grids = tuple(
            TorusGrid(dim=int(header[1 + 2 * k]), points_per_dim=int(header[2 + 2 * k]))
            for k in range(K)
        )
        tokens = fh.read().split()
    values = np.array(tokens, dtype=float)
    expected = sum(
        grids[i].cell_count * grids[j].cell_count
        for i in range(K) for j in range(i + 1, K)
    )
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} table entries, found {values.size}")
    kernels = {}
    pos = 0
    for i in range(K):
        for j in range(i + 1, K):
            size = grids[i].cell_count * grids[j].cell_count
            block = values[pos:pos + size].reshape(grids[i].cell_count, grids[j].cell_count)
            kernels[(i, j)] = PairwiseKernel(i, j, block)
            pos += size
    return Game(grids, kernels, label="custom")
