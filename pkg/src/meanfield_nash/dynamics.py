"""Time integration of the coupled transport/averaging flow.

Each player's density obeys a drift-diffusion equation whose drift
potential is the effective potential against the *time-averaged* opponent
densities, while the averages relax toward the instantaneous densities:

    d/dt nu^i     = div(nu^i grad A_i) + tau lap(nu^i),  A_i = U_i * hat nu^{-i}
    d/dt hat nu^i = alpha (nu^i - hat nu^i)

Space is discretized by a finite-volume scheme with exponential-fitting
(Scharfetter-Gummel) edge fluxes. Writing B(z) = z / (e^z - 1) and
delta = (A_{k+1} - A_k) / tau, the signed mass-flow rate from cell k to
cell k+1 is

    f = (tau / h^2) * (B(delta) p_k - B(-delta) p_{k+1}),

which vanishes identically when p is proportional to exp(-A/tau): the
discrete Gibbs state is *exactly* stationary, so the integrator and the
fixed-point solver agree at equilibrium to machine precision. Time uses
explicit Euler with the positivity bound dt <= h^2 / (2 dim tau maxB);
run() evaluates the bound from a per-game sup of kernel edge jumps (valid
for every opponent profile), rechecks it whenever tau changes, and halves
dt for the step when violated. Annealing shrinks tau, which loosens the
diffusion limit while stiffening the drift, so the bound genuinely moves.

The averaging line is integrated exactly per step with nu frozen:
hat' = e^(-alpha dt) hat + (1 - e^(-alpha dt)) nu. Operator order within
a step is transport first against frozen hat, then averaging with the new
nu; the committed order error is O(dt^2).

A single run is sequential in time; distinct runs share nothing and may
proceed in parallel. States cross execution contexts only at step
boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InvalidTemperatureError,
    ScheduleValidationError,
    StepSizeError,
    SupportError,
)
from .game import Game, GameConstants
from .grid import Density, PotentialField, check_same_grid
from .metrics import MetricsRecord, lyapunov

EIGHT_PI_SQ = 8.0 * math.pi ** 2
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class DynamicsState:
    """Per-player (nu, hat nu) pair plus the clock."""

    t: float
    nu: tuple
    nu_hat: tuple

    def __post_init__(self):
        if len(self.nu) != len(self.nu_hat):
            raise ValueError("nu and nu_hat must have one entry per player")
        object.__setattr__(self, "nu", tuple(self.nu))
        object.__setattr__(self, "nu_hat", tuple(self.nu_hat))
        for a, b in zip(self.nu, self.nu_hat):
            check_same_grid(a, b)


@dataclass(frozen=True)
class RateConstants:
    """Decay-rate constants at a fixed (tau, alpha).

    kappa is the log-Sobolev constant of the moving Gibbs targets,
    lam = min(tau / (2 kappa), alpha / 4) the certified exponential rate,
    and alpha_bar0 the averaging-rate threshold below which the rate holds.
    """

    kappa: float
    lam: float
    alpha_bar0: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.lam > 0 and self.alpha_bar0 > 0):
            raise ValueError("rate constants must be positive")


def rate_constants(constants: GameConstants, tau: float, alpha: float) -> RateConstants:
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    if alpha <= 0:
        raise ValueError(f"averaging rate must be positive, got {alpha}")
    kappa = math.exp(constants.m0 / tau) / EIGHT_PI_SQ
    lam = min(tau / (2.0 * kappa), alpha / 4.0)
    alpha_bar0 = tau / (53.0 * kappa * max(1.0, (kappa * constants.m2 / tau) ** 2))
    return RateConstants(kappa=kappa, lam=lam, alpha_bar0=alpha_bar0)


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class FixedSchedule:
    tau: float
    alpha: float
    kind: str = field(default="fixed", init=False)

    def __post_init__(self):
        if self.tau <= 0 or self.alpha <= 0:
            raise ValueError("fixed schedule needs tau > 0 and alpha > 0")

    def tau_at(self, t: float) -> float:
        return self.tau

    def alpha_at(self, t: float) -> float:
        return self.alpha


@dataclass(frozen=True)
class AnnealedSchedule:
    """Cooling tau_t = 1 / (delta ln(c0 + t)) with alpha_t = beta / sqrt(c0 + t).

    certified=True means the parameters passed validate_annealing against
    the game constants; pragmatic (user-forced) schedules carry
    certified=False and no decay guarantee.
    """

    delta: float
    beta: float
    c0: float
    certified: bool = False
    kind: str = field(default="annealed", init=False)

    def __post_init__(self):
        if self.delta <= 0 or self.beta <= 0:
            raise ValueError("annealed schedule needs delta > 0 and beta > 0")
        if self.c0 <= 1.0:
            raise ValueError("annealed schedule needs c0 > 1")

    def tau_at(self, t: float) -> float:
        return 1.0 / (self.delta * math.log(self.c0 + t))

    def alpha_at(self, t: float) -> float:
        return self.beta / math.sqrt(self.c0 + t)


_ANNEALING_CONDITIONS = {
    "delta_bound": "need 0 < delta <= 1 / (12 m0)",
    "beta_bound": "need 0 < beta <= 3 / (delta^3 m2)",
    "c0_floor": "need c0 >= 144 / beta^2",
    "c0_log_growth": "need delta * m2 * c0^(delta m0) * ln(c0) >= 8 pi^2 (with c0 > 1)",
}


def validate_annealing(
    constants: GameConstants, delta: float, beta: float, c0: float
) -> AnnealedSchedule:
    """Check the four admissibility inequalities; raise listing every violation.

    Returns a certified AnnealedSchedule when all of them hold:
      delta_bound     0 < delta <= 1 / (12 m0)
      beta_bound      0 < beta <= 3 / (delta^3 m2)
      c0_floor        c0 >= 144 / beta^2
      c0_log_growth   delta m2 c0^(delta m0) ln(c0) >= 8 pi^2
    """
    violations = []
    if not (delta > 0 and 12.0 * constants.m0 * delta <= 1.0):
        limit = 1.0 / (12.0 * constants.m0) if constants.m0 > 0 else math.inf
        violations.append(
            ("delta_bound", f"{_ANNEALING_CONDITIONS['delta_bound']}; "
             f"got delta={delta}, 1/(12 m0)={limit}")
        )
    if not (beta > 0 and (delta <= 0 or beta * delta ** 3 * constants.m2 <= 3.0)):
        limit = 3.0 / (delta ** 3 * constants.m2) if delta > 0 and constants.m2 > 0 else math.inf
        violations.append(
            ("beta_bound", f"{_ANNEALING_CONDITIONS['beta_bound']}; "
             f"got beta={beta}, 3/(delta^3 m2)={limit}")
        )
    if not (beta > 0 and c0 >= 144.0 / beta ** 2):
        violations.append(
            ("c0_floor", f"{_ANNEALING_CONDITIONS['c0_floor']}; got c0={c0}")
        )
    if not (c0 > 1.0 and delta > 0
            and delta * constants.m2 * c0 ** (delta * constants.m0) * math.log(c0) >= EIGHT_PI_SQ):
        violations.append(
            ("c0_log_growth", f"{_ANNEALING_CONDITIONS['c0_log_growth']}; got c0={c0}")
        )
    if violations:
        raise ScheduleValidationError(violations)
    return AnnealedSchedule(delta=delta, beta=beta, c0=c0, certified=True)


def derive_certified_schedule(constants: GameConstants, headroom: float = 1.001) -> AnnealedSchedule:
    """Largest admissible delta and beta, then the smallest admissible c0.

    delta and beta saturate their bounds; c0 is the max of the floor
    144/beta^2 and the root of the log-growth condition, found by
    bisection, then inflated by `headroom` so the validator's exact
    inequalities survive roundoff.
    """
    if constants.m0 <= 0 or constants.m2 <= 0:
        raise ValueError(
            "certified schedule derivation needs m0 > 0 and m2 > 0 "
            f"(got m0={constants.m0}, m2={constants.m2}); scale the game or use a pragmatic schedule"
        )
    delta = 1.0 / (12.0 * constants.m0)
    beta = 3.0 / (delta ** 3 * constants.m2)

    def gap(c_0: float) -> float:
        return delta * constants.m2 * c_0 ** (delta * constants.m0) * math.log(c_0) - EIGHT_PI_SQ

    lo = 1.0 + 1e-9
    hi = 2.0
    while gap(hi) < 0:
        hi *= 4.0
        if hi > 1e300:
            raise ValueError("log-growth condition unsatisfiable within float range")
    root = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-14) if gap(lo) < 0 else lo
    c0 = max(144.0 / beta ** 2, root, 1.0 + 1e-6) * headroom
    return validate_annealing(constants, delta, beta, c0)


def annealed_bound(constants: GameConstants, schedule: AnnealedSchedule, s0: float, t: float) -> float:
    """Envelope the certified annealed run must stay under at elapsed time t."""
    root_now = math.sqrt(schedule.c0 + t)
    first = 32.0 * schedule.delta * constants.m1 / (schedule.beta * root_now)
    second = math.exp(-0.5 * schedule.beta * (root_now - math.sqrt(schedule.c0))) * s0
    return first + second


# ---------------------------------------------------------------------------
# single steps


def bernoulli_flux_weight(z):
    """B(z) = z / (e^z - 1), continuously extended with B(0) = 1.

    z / expm1(z) is accurate to a couple of ulps for every nonzero double;
    the tails are safe too (overflow of expm1 gives the correct 0 limit
    for z -> +inf, and B(z) -> -z for z -> -inf).
    """
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.where(z == 0.0, 1.0, z / np.expm1(z))
    return out


def _bernoulli_scalar(z: float) -> float:
    if z == 0.0:
        return 1.0
    if z > 700.0:
        return 0.0
    if z < -700.0:
        return -z
    return z / math.expm1(z)


def _max_flux_weight(max_abs_delta: float) -> float:
    # B(-z) = B(z) + z is the larger orientation at |z|.
    return _bernoulli_scalar(max_abs_delta) + max_abs_delta


def stability_limit(field: PotentialField, tau: float) -> float:
    """Largest dt keeping the explicit flux step positivity-preserving
    for this particular potential."""
    g = field.grid
    a = g.shaped(field.value)
    max_d = 0.0
    for axis in range(g.dim):
        max_d = max(max_d, float(np.abs(np.roll(a, -1, axis=axis) - a).max()))
    max_b = _max_flux_weight(max_d / tau)
    return g.spacing ** 2 / (2.0 * g.dim * tau * max_b)


def _edge_jump_bounds(game: Game) -> list[float]:
    """Per player, sup over axes of sum_j sup over adjacent cells of the
    kernel jump; bounds |A_{k+1} - A_k| for every opponent profile."""
    out = []
    for i in range(game.num_players):
        g = game.grids[i]
        spatial = (g.points_per_dim,) * g.dim
        per_axis = [0.0] * g.dim
        for j, table in game.opponents(i):
            t = table.reshape(spatial + (-1,))
            for axis in range(g.dim):
                d = np.roll(t, -1, axis=axis) - t
                per_axis[axis] += float(np.abs(d).max())
        out.append(max(per_axis))
    return out


def run_stability_limit(game: Game, tau: float) -> float:
    """A-priori dt bound used by run(): min over players of the positivity
    limit with the kernel-edge-jump bound standing in for the realized
    potential. Valid for every opponent profile, recomputed per tau."""
    jumps = _edge_jump_bounds(game)
    limit = math.inf
    for i, jump in enumerate(jumps):
        g = game.grids[i]
        max_b = _max_flux_weight(jump / tau)
        limit = min(limit, g.spacing ** 2 / (2.0 * g.dim * tau * max_b))
    return limit


def _sg_step_batch(P: np.ndarray, A: np.ndarray, tau: float, dt: float, h: float) -> np.ndarray:
    """One explicit flux step for a batch of players sharing a grid shape.

    P, A have shape (m, n) or (m, n, n); the leading axis is the batch.
    Mass is conserved edge-by-edge (each flow value enters two cells with
    opposite signs) and nonnegativity holds under the stability bound.
    """
    scale = tau / h ** 2
    out = P.copy()
    for axis in range(1, P.ndim):
        delta = (np.roll(A, -1, axis=axis) - A) / tau
        bp = bernoulli_flux_weight(delta)
        bm = bp + delta
        flow = scale * (bp * P - bm * np.roll(P, -1, axis=axis))
        out += dt * (np.roll(flow, 1, axis=axis) - flow)
    return out


def fokker_planck_step(nu: Density, field: PotentialField, tau: float, dt: float) -> Density:
    """Advance one density by dt against a frozen drift potential.

    Raises StepSizeError when dt exceeds the positivity bound; the caller
    is expected to halve dt and retry (run() does this automatically).
    """
    check_same_grid(nu, field)
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = stability_limit(field, tau)
    if dt > limit:
        raise StepSizeError(f"dt={dt} exceeds stability bound {limit}")
    g = nu.grid
    p = g.shaped(nu.mass)[None, ...]
    a = g.shaped(field.value)[None, ...]
    new = _sg_step_batch(p, a, tau, dt, g.spacing)[0]
    return Density(g, new.reshape(-1))


def averaging_step(nu_hat: Density, nu: Density, alpha: float, dt: float) -> Density:
    """Exact integrating-factor update of the averaged density with nu frozen.

    hat' = e^(-alpha dt) hat + (1 - e^(-alpha dt)) nu: a convex combination,
    hence a valid density for any alpha >= 0.
    """
    check_same_grid(nu_hat, nu)
    if alpha < 0:
        raise ValueError("averaging rate must be nonnegative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = math.exp(-alpha * dt)
    return Density(nu_hat.grid, w * nu_hat.mass + (1.0 - w) * nu.mass)


# ---------------------------------------------------------------------------
# full runs


@dataclass(frozen=True)
class IntegratorConfig:
    """Explicit-Euler settings; dt is the macro step, halved internally when
    the stability bound tightens. record_every is a time interval."""

    dt: float
    t_end: float
    record_every: float
    scheme: str = "scharfetter_gummel"
    baseline_gda: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.record_every <= 0:
            raise ValueError("dt, t_end and record_every must be positive")
        if self.scheme != "scharfetter_gummel":
            raise ValueError(f"unknown scheme {self.scheme!r}")


class _Runner:
    """Mutable per-run workspace: players grouped by grid shape so one
    batched flux step advances a whole group, with flat views into the
    group arrays for the potential matvecs."""

    def __init__(self, game: Game, init: DynamicsState):
        self.game = game
        K = game.num_players
        groups: dict = {}
        for i, g in enumerate(game.grids):
            groups.setdefault((g.dim, g.points_per_dim), []).append(i)
        self.groups = []
        self.flat_p = [None] * K   # flat views into the group arrays
        self.flat_h = [None] * K
        self.flat_a = [None] * K
        for (dim, n), members in groups.items():
            shape = (n,) * dim
            P = np.stack([init.nu[i].mass.reshape(shape) for i in members])
            H = np.stack([init.nu_hat[i].mass.reshape(shape) for i in members])
            A = np.empty_like(P)
            h = game.grids[members[0]].spacing
            self.groups.append({"members": members, "P": P, "H": H, "A": A, "h": h})
            for row, i in enumerate(members):
                self.flat_p[i] = P[row].reshape(-1)
                self.flat_h[i] = H[row].reshape(-1)
                self.flat_a[i] = A[row].reshape(-1)

    def potentials(self, from_hat: bool) -> None:
        src = self.flat_h if from_hat else self.flat_p
        for i in range(self.game.num_players):
            acc = self.flat_a[i]
            first = True
            for j, table in self.game.opponents(i):
                if first:
                    np.matmul(table, src[j], out=acc)
                    first = False
                else:
                    acc += table @ src[j]

    def transport(self, tau: float, dt: float) -> None:
        for grp in self.groups:
            new = _sg_step_batch(grp["P"], grp["A"], tau, dt, grp["h"])
            grp["P"][...] = new

    def average(self, alpha: float, dt: float) -> None:
        w = math.exp(-alpha * dt)
        for grp in self.groups:
            grp["H"] *= w
            grp["H"] += (1.0 - w) * grp["P"]

    def mirror_hat(self) -> None:
        for grp in self.groups:
            grp["H"][...] = grp["P"]

    def snapshot(self, t: float) -> DynamicsState:
        K = self.game.num_players
        nu = tuple(
            Density(self.game.grids[i], self.flat_p[i] / self.flat_p[i].sum()) for i in range(K)
        )
        hat = tuple(
            Density(self.game.grids[i], self.flat_h[i] / self.flat_h[i].sum()) for i in range(K)
        )
        return DynamicsState(t=t, nu=nu, nu_hat=hat)


def run(
    game: Game,
    schedule,
    config: IntegratorConfig,
    init: DynamicsState,
    star: Sequence[Density] | None = None,
    observer: Callable | None = None,
) -> list[MetricsRecord]:
    """Integrate the coupled flow and emit metrics records on a time cadence.

    Per macro step: read (tau, alpha) from the schedule, build each A_i
    from the *averaged* opponents (from the instantaneous ones in baseline
    mode), advance every density by the flux step, then relax the averages
    toward the new densities. Records are evaluated at the instantaneous
    temperature, which for annealed runs is the moving-target convention;
    a record is always emitted at t = 0 and at t_end. Masses are
    renormalized (roundoff-level correction) only when records are built.

    star fills the tv_to_star record entries; observer(state) is called at
    every record emission with the freshly built DynamicsState. If dt must
    be halved more than 60 times the raised StepSizeError carries the
    records collected so far.
    """
    K = game.num_players
    if len(init.nu) != K:
        raise ValueError(f"init needs {K} players, got {len(init.nu)}")
    for i in range(K):
        if init.nu[i].grid != game.grids[i]:
            raise ValueError(f"init density {i} lives on the wrong grid")
        if not (init.nu[i].is_strictly_positive() and init.nu_hat[i].is_strictly_positive()):
            raise SupportError(
                "initial densities must be strictly positive (finite initial entropies)"
            )

    runner = _Runner(game, init)
    records: list[MetricsRecord] = []
    jumps = _edge_jump_bounds(game)
    grid_factors = [
        game.grids[i].spacing ** 2 / (2.0 * game.grids[i].dim) for i in range(K)
    ]

    def bound_for(tau: float) -> float:
        return min(
            grid_factors[i] / (tau * _max_flux_weight(jumps[i] / tau)) for i in range(K)
        )

    def emit(t_now: float, tau: float, alpha: float) -> None:
        state = runner.snapshot(t_now)
        records.append(lyapunov(game, tau, state, alpha=alpha, star=star))
        if observer is not None:
            observer(state)

    annealed = schedule.kind == "annealed"
    tau = schedule.tau_at(0.0)
    limit = bound_for(tau)

    t = 0.0
    emit(t, tau, schedule.alpha_at(0.0))
    next_record = config.record_every

    while t < config.t_end - 1e-12:
        dt_macro = min(config.dt, config.t_end - t)
        if annealed:
            tau = schedule.tau_at(t)
            limit = bound_for(tau)
        alpha = schedule.alpha_at(t)
        halvings = 0
        dt_sub = dt_macro
        while dt_sub > limit:
            dt_sub *= 0.5
            halvings += 1
            if halvings > _MAX_HALVINGS:
                raise StepSizeError(
                    f"stability bound {limit} unreachable from dt={dt_macro}",
                    time=t, records=records,
                )
        # tau only shrinks within the macro step and the bound is
        # decreasing in tau (tau*B(J/tau) + J grows with tau), so dt_sub
        # stays admissible across the substeps without rechecking
        for s in range(1 << halvings):
            if s and annealed:
                tau = schedule.tau_at(t)
                alpha = schedule.alpha_at(t)
            runner.potentials(from_hat=not config.baseline_gda)
            runner.transport(tau, dt_sub)
            if config.baseline_gda:
                runner.mirror_hat()
            else:
                runner.average(alpha, dt_sub)
            t += dt_sub
        if t >= next_record - 1e-9 or t >= config.t_end - 1e-12:
            emit(t, schedule.tau_at(t), schedule.alpha_at(t))
            while next_record <= t + 1e-9:
                next_record += config.record_every
    return records
