import math

import numpy as np
import pytest
from scipy.integrate import quad

from meanfield_nash import (
    AnnealedSchedule,
    Density,
    DynamicsState,
    FixedSchedule,
    IntegratorConfig,
    PotentialField,
    ScheduleValidationError,
    StepSizeError,
    SupportError,
    TorusGrid,
    annealed_bound,
    averaging_step,
    bernoulli_flux_weight,
    builtin_game,
    derive_certified_schedule,
    fokker_planck_step,
    game_constants,
    gibbs_from_potential,
    normalize,
    rate_constants,
    run,
    solve_fixed_point,
    stability_limit,
    tv_distance,
    uniform_density,
    validate_annealing,
)
from meanfield_nash.dynamics import run_stability_limit
from meanfield_nash.game import GameConstants

from conftest import seeded_density

EIGHT_PI_SQ = 8 * math.pi ** 2


# ---------------------------------------------------------------------------
# rate constants


def test_rate_constants_arithmetic_examples():
    c = GameConstants(m0=1.0, m1=2.0, m2=4 * math.pi ** 2, l=1.0)
    rc = rate_constants(c, tau=1.0, alpha=1.0)
    assert rc.kappa == pytest.approx(math.e / EIGHT_PI_SQ, rel=1e-14)
    # tau / (2 kappa) ~ 14.52 > alpha / 4, so the rate is alpha / 4
    assert 1.0 / (2 * rc.kappa) == pytest.approx(14.52, rel=1e-3)
    assert rc.lam == 0.25
    ratio = rc.kappa * c.m2 / 1.0
    assert ratio == pytest.approx(1.359, rel=1e-3)
    assert rc.alpha_bar0 == pytest.approx(1.0 / (53 * rc.kappa * ratio ** 2), rel=1e-14)
    assert rc.alpha_bar0 == pytest.approx(0.2968, rel=1e-3)


def test_rate_constants_small_ratio_branch():
    c = GameConstants(m0=0.25, m1=0.5, m2=0.25 * 4 * math.pi ** 2, l=1.0)
    rc = rate_constants(c, tau=1.0, alpha=0.1)
    # kappa m2 / tau < 1, so the max(1, .) clamps
    assert rc.alpha_bar0 == pytest.approx(1.0 / (53 * rc.kappa), rel=1e-14)
    assert rc.lam == pytest.approx(0.025)


# ---------------------------------------------------------------------------
# flux weight


def test_bernoulli_flux_weight_values():
    z = np.array([0.0, 1e-12, -1e-12, 0.5, -0.5, 50.0, -50.0, 800.0, -800.0])
    b = bernoulli_flux_weight(z)
    assert b[0] == 1.0
    assert b[1] == pytest.approx(1.0, rel=1e-9)
    assert b[3] == pytest.approx(0.5 / (math.e ** 0.5 - 1), rel=1e-14)
    assert b[7] == 0.0
    assert b[8] == pytest.approx(800.0)
    # reflection identity B(-z) = B(z) + z
    zz = np.linspace(-30, 30, 101)
    np.testing.assert_allclose(bernoulli_flux_weight(-zz), bernoulli_flux_weight(zz) + zz,
                               rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# fokker-planck step


def test_constant_potential_is_pure_heat_step():
    g = TorusGrid(1, 16)
    a = PotentialField(g, np.full(16, 2.5))
    tau, h = 0.8, g.spacing
    d = normalize(1.0 + np.arange(16.0), g)
    dt = 0.25 * stability_limit(a, tau)
    new = fokker_planck_step(d, a, tau, dt)
    p = d.mass
    expected = p + dt * (tau / h ** 2) * (np.roll(p, 1) - 2 * p + np.roll(p, -1))
    np.testing.assert_allclose(new.mass, expected, atol=1e-16)
    u = uniform_density(g)
    np.testing.assert_array_equal(fokker_planck_step(u, a, tau, dt).mass, u.mass)


def test_gibbs_state_is_exactly_stationary():
    for dim, n in ((1, 64), (2, 12)):
        g = TorusGrid(dim, n)
        x = g.cell_centers
        vals = np.cos(2 * np.pi * x[:, 0]) + (0.5 * np.sin(2 * np.pi * x[:, 1]) if dim == 2 else 0.0)
        a = PotentialField(g, vals)
        tau = 0.6
        gb = gibbs_from_potential(a, tau)
        dt = 0.9 * stability_limit(a, tau)
        stepped = fokker_planck_step(gb, a, tau, dt)
        assert tv_distance(stepped, gb) < 1e-14


def test_long_run_reaches_gibbs():
    g = TorusGrid(1, 32)
    a = PotentialField(g, 1.2 * np.cos(2 * np.pi * g.cell_centers[:, 0]))
    tau = 0.5
    target = gibbs_from_potential(a, tau)
    d = uniform_density(g)
    dt = 0.5 * stability_limit(a, tau)
    for _ in range(30000):
        d = fokker_planck_step(d, a, tau, dt)
    assert tv_distance(d, target) < 1e-10


def test_heat_mode_decay_rate_matches_discrete_dispersion():
    # zero drift: the first Fourier mode decays at 4 pi^2 tau (sin(pi h)/(pi h))^2
    n, tau = 64, 0.3
    g = TorusGrid(1, n)
    x = g.cell_centers[:, 0]
    a = PotentialField(g, np.zeros(n))
    d = normalize(1.0 + 0.5 * np.cos(2 * np.pi * x), g)
    h = g.spacing
    dt = 0.5 * stability_limit(a, tau)
    steps = 400
    c0 = abs(np.exp(-2j * np.pi * x) @ d.mass)
    for _ in range(steps):
        d = fokker_planck_step(d, a, tau, dt)
    c1 = abs(np.exp(-2j * np.pi * x) @ d.mass)
    rate = -math.log(c1 / c0) / (steps * dt)
    predicted = 4 * math.pi ** 2 * tau * (math.sin(math.pi * h) / (math.pi * h)) ** 2
    assert rate == pytest.approx(predicted, rel=0.01)


def test_step_conserves_mass_and_positivity(rng):
    g = TorusGrid(1, 24)
    a = PotentialField(g, 2.0 * rng.standard_normal(24))
    tau = 0.2
    d = seeded_density(g, rng, floor=0.0)
    dt = 0.999 * stability_limit(a, tau)
    for _ in range(200):
        d = fokker_planck_step(d, a, tau, dt)
        assert d.mass.min() >= 0.0
        assert abs(d.mass.sum() - 1.0) < 1e-13


def test_step_size_error():
    g = TorusGrid(1, 16)
    a = PotentialField(g, np.cos(2 * np.pi * g.cell_centers[:, 0]))
    with pytest.raises(StepSizeError):
        fokker_planck_step(uniform_density(g), a, 0.5, 1.01 * stability_limit(a, 0.5))


# ---------------------------------------------------------------------------
# averaging step


def test_averaging_trivial_limits(rng):
    g = TorusGrid(1, 8)
    hat = seeded_density(g, rng)
    nu = seeded_density(g, rng)
    np.testing.assert_array_equal(averaging_step(hat, nu, 0.0, 0.5).mass, hat.mass)
    far = averaging_step(hat, nu, 1e9, 1.0)
    np.testing.assert_allclose(far.mass, nu.mass, atol=1e-15)


def test_averaging_matches_quadrature_of_explicit_solution(rng):
    # piecewise-constant nu path; oracle integrates alpha e^(-alpha (T - s))
    # over each piece with adaptive quadrature
    g = TorusGrid(1, 8)
    alpha, dt, pieces = 1.7, 0.3, 10
    hat0 = seeded_density(g, rng)
    nus = [seeded_density(g, rng) for _ in range(pieces)]
    hat = hat0
    for nu in nus:
        hat = averaging_step(hat, nu, alpha, dt)
    T = pieces * dt
    expected = math.exp(-alpha * T) * hat0.mass.copy()
    for j, nu in enumerate(nus):
        weight, err = quad(lambda s: alpha * math.exp(-alpha * (T - s)), j * dt, (j + 1) * dt,
                           epsabs=1e-14, epsrel=1e-14)
        assert err < 1e-13
        expected = expected + weight * nu.mass
    np.testing.assert_allclose(hat.mass, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# schedules


def _mild_constants():
    game = builtin_game("shift_cosine", [0.05], [TorusGrid(1, 32)] * 2)
    return game_constants(game)


def test_derive_certified_schedule_saturates_bounds():
    c = _mild_constants()
    s = derive_certified_schedule(c)
    assert s.certified
    assert s.delta == pytest.approx(1.0 / (12 * c.m0), rel=1e-12)
    assert s.beta == pytest.approx(3.0 / (s.delta ** 3 * c.m2), rel=1e-12)
    # binding constraint is the log-growth condition, not the 144/beta^2 floor
    assert s.c0 > 10 * 144.0 / s.beta ** 2
    g = s.delta * c.m2 * s.c0 ** (s.delta * c.m0) * math.log(s.c0)
    assert g >= EIGHT_PI_SQ
    assert g == pytest.approx(EIGHT_PI_SQ, rel=5e-3)  # close to binding


def test_validate_annealing_rejects_each_condition():
    c = _mild_constants()
    good = derive_certified_schedule(c)
    cases = {
        "delta_bound": (1.0 / (6 * c.m0), good.beta, good.c0),
        "beta_bound": (good.delta, 1.01 * 3.0 / (good.delta ** 3 * c.m2), good.c0),
        "c0_floor": (good.delta, good.beta, 0.99 * 144.0 / good.beta ** 2),
        "c0_log_growth": (good.delta, good.beta, max(144.0 / good.beta ** 2, 2.0)),
    }
    for key, (d, b, c0) in cases.items():
        with pytest.raises(ScheduleValidationError) as exc_info:
            validate_annealing(c, d, b, c0)
        assert key in exc_info.value.violated_keys(), key


def test_validate_annealing_accepts_derived():
    c = _mild_constants()
    s = derive_certified_schedule(c)
    again = validate_annealing(c, s.delta, s.beta, s.c0)
    assert again.certified


def test_schedule_evaluation():
    s = AnnealedSchedule(delta=2.0, beta=0.5, c0=100.0)
    assert s.tau_at(0.0) == pytest.approx(1.0 / (2.0 * math.log(100.0)), rel=1e-14)
    assert s.alpha_at(44.0) == pytest.approx(0.5 / 12.0, rel=1e-14)
    assert not s.certified
    f = FixedSchedule(tau=0.7, alpha=0.2)
    assert f.tau_at(5.0) == 0.7 and f.alpha_at(5.0) == 0.2


def test_annealed_bound_formula():
    c = GameConstants(m0=0.05, m1=0.1, m2=2.0, l=1.0)
    s = AnnealedSchedule(delta=1.5, beta=0.4, c0=2000.0)
    at0 = annealed_bound(c, s, s0=3.0, t=0.0)
    assert at0 == pytest.approx(32 * 1.5 * 0.1 / (0.4 * math.sqrt(2000.0)) + 3.0, rel=1e-14)
    values = [annealed_bound(c, s, 3.0, t) for t in np.linspace(0.0, 1e7, 60)]
    assert all(b2 < b1 for b1, b2 in zip(values, values[1:]))
    assert values[-1] < 0.01 * values[0]


# ---------------------------------------------------------------------------
# full runs


def _state_from(profile):
    return DynamicsState(0.0, tuple(profile), tuple(profile))


def test_zero_game_relaxes_to_uniform(rng):
    grids = [TorusGrid(1, 16)] * 2
    game = builtin_game("zero", [], grids)
    prof = [seeded_density(g, rng) for g in grids]
    cfg = IntegratorConfig(dt=0.4 * run_stability_limit(game, 1.0), t_end=8.0, record_every=0.5)
    recs = run(game, FixedSchedule(tau=1.0, alpha=2.0), cfg, _state_from(prof))
    assert recs[-1].s_t < 1e-10
    assert recs[-1].ni < 1e-12
    assert recs[0].s_t > recs[-1].s_t


def test_stationary_at_fixed_point(rng):
    grids = [TorusGrid(1, 32)] * 2
    game = builtin_game("random_smooth", [1.5, 7], grids)
    tau = 0.5
    star = solve_fixed_point(game, tau, tol=1e-12).densities
    cfg = IntegratorConfig(dt=0.5 * run_stability_limit(game, tau), t_end=2.0, record_every=0.25)
    recs = run(game, FixedSchedule(tau=tau, alpha=1.0), cfg, _state_from(list(star)), star=star)
    assert all(r.s_t < 1e-12 for r in recs)
    assert all(tv < 1e-10 for r in recs for tv in r.tv_to_star)


def test_mass_and_positivity_along_run(rng):
    grids = [TorusGrid(1, 16)] * 3
    game = builtin_game("random_smooth", [1.0, 5], grids)
    prof = [seeded_density(g, rng) for g in grids]
    seen = []

    def observer(state):
        for d in list(state.nu) + list(state.nu_hat):
            seen.append((d.mass.min(), d.mass.sum()))

    cfg = IntegratorConfig(dt=0.5 * run_stability_limit(game, 0.4), t_end=1.0, record_every=0.1)
    run(game, FixedSchedule(tau=0.4, alpha=0.5), cfg, _state_from(prof), observer=observer)
    assert seen
    for mn, total in seen:
        assert mn >= 0.0
        assert abs(total - 1.0) <= 1e-12


def test_run_requires_positive_init():
    grids = [TorusGrid(1, 8)] * 2
    game = builtin_game("zero", [], grids)
    bad = Density(grids[0], np.array([0.5, 0.5, 0, 0, 0, 0, 0, 0]))
    cfg = IntegratorConfig(dt=1e-3, t_end=0.1, record_every=0.05)
    with pytest.raises(SupportError):
        run(game, FixedSchedule(tau=1.0, alpha=1.0), cfg,
            DynamicsState(0.0, (bad, bad), (bad, bad)))


def test_run_halves_oversized_dt(rng):
    grids = [TorusGrid(1, 16)] * 2
    game = builtin_game("shift_cosine", [0.5], grids)
    tau = 0.8
    limit = run_stability_limit(game, tau)
    prof = [seeded_density(g, rng) for g in grids]
    # dt far above the bound: run must substep internally and stay sane
    cfg = IntegratorConfig(dt=6.0 * limit, t_end=0.5, record_every=0.1)
    recs = run(game, FixedSchedule(tau=tau, alpha=1.0), cfg, _state_from(prof))
    assert recs[-1].t == pytest.approx(0.5, abs=1e-9)
    assert recs[-1].s_t < recs[0].s_t
    # reference run at a compliant dt reaches the same state
    cfg2 = IntegratorConfig(dt=0.75 * limit, t_end=0.5, record_every=0.1)
    recs2 = run(game, FixedSchedule(tau=tau, alpha=1.0), cfg2, _state_from(prof))
    assert recs[-1].s_t == pytest.approx(recs2[-1].s_t, rel=2e-2, abs=1e-12)


def test_run_step_failure_carries_records(rng, monkeypatch):
    import meanfield_nash.dynamics as dyn

    monkeypatch.setattr(dyn, "_MAX_HALVINGS", 1)
    grids = [TorusGrid(1, 16)] * 2
    game = builtin_game("shift_cosine", [0.5], grids)
    tau = 0.8
    limit = run_stability_limit(game, tau)
    prof = [seeded_density(g, rng) for g in grids]
    cfg = IntegratorConfig(dt=8.0 * limit, t_end=1.0, record_every=0.5)
    with pytest.raises(StepSizeError) as err:
        run(game, FixedSchedule(tau=tau, alpha=1.0), cfg, _state_from(prof))
    assert err.value.time == 0.0
    assert len(err.value.records) == 1  # the t=0 record survives


def test_baseline_matches_huge_alpha(rng):
    grids = [TorusGrid(1, 16)] * 2
    game = builtin_game("random_smooth", [1.0, 9], grids)
    prof = [seeded_density(g, rng) for g in grids]
    tau = 0.6
    dt = 0.5 * run_stability_limit(game, tau)
    cfg_base = IntegratorConfig(dt=dt, t_end=0.5, record_every=0.1, baseline_gda=True)
    cfg_big = IntegratorConfig(dt=dt, t_end=0.5, record_every=0.1)
    out_base = {}
    out_big = {}
    run(game, FixedSchedule(tau=tau, alpha=1.0), cfg_base, _state_from(prof),
        observer=lambda s: out_base.update(state=s))
    run(game, FixedSchedule(tau=tau, alpha=1e9), cfg_big, _state_from(prof),
        observer=lambda s: out_big.update(state=s))
    for i in range(2):
        gap = tv_distance(out_base["state"].nu[i], out_big["state"].nu[i])
        assert gap < 1e-12


def test_run_2d_smoke(rng):
    grids = [TorusGrid(2, 8)] * 2
    game = builtin_game("random_smooth", [0.5, 3], grids)
    prof = [seeded_density(g, rng) for g in grids]
    tau = 0.8
    cfg = IntegratorConfig(dt=0.5 * run_stability_limit(game, tau), t_end=0.5, record_every=0.1)
    recs = run(game, FixedSchedule(tau=tau, alpha=1.0), cfg, _state_from(prof))
    assert recs[-1].s_t < recs[0].s_t
    assert all(r.s_t >= 0 for r in recs)


def test_run_heterogeneous_grids(rng):
    grids = [TorusGrid(1, 12), TorusGrid(1, 20)]
    game = builtin_game("random_smooth", [0.8, 2], grids)
    prof = [seeded_density(g, rng) for g in grids]
    tau = 0.7
    cfg = IntegratorConfig(dt=0.5 * run_stability_limit(game, tau), t_end=0.5, record_every=0.25)
    recs = run(game, FixedSchedule(tau=tau, alpha=1.0), cfg, _state_from(prof))
    assert recs[-1].s_t < recs[0].s_t


def test_fixed_decay_rate_at_least_lambda(rng):
    # measured decay of s_t must beat the certified rate when alpha <= alpha_bar0
    grids = [TorusGrid(1, 32)] * 2
    game = builtin_game("shift_cosine", [0.25], grids)
    c = game_constants(game)
    tau = 1.0
    alpha = rate_constants(c, tau, 1.0).alpha_bar0
    rc = rate_constants(c, tau, alpha)
    prof = [seeded_density(g, rng) for g in grids]
    cfg = IntegratorConfig(dt=0.5 * run_stability_limit(game, tau), t_end=6.0, record_every=0.2)
    recs = run(game, FixedSchedule(tau=tau, alpha=alpha), cfg, _state_from(prof))
    ts = np.array([r.t for r in recs])
    ss = np.array([r.s_t for r in recs])
    keep = ss > 1e-12
    fitted = -np.polyfit(ts[keep], np.log(ss[keep]), 1)[0]
    assert fitted >= rc.lam
    s0 = recs[0].s_t
    assert all(r.s_t <= 1.05 * math.exp(-rc.lam * r.t) * s0 + 1e-12 for r in recs)
