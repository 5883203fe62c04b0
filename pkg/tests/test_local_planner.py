from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from himos.belief import BeliefState, CandidateMap
from himos.local_planner import (LocalPlannerConfig, LocalProblem, ProxyBeliefState, ProxySensorParams,
                                 build_active_map, build_problem, evaluate, evidence_magnitude,
                                 h_proxy, h_proxy_grad, horizon_steps, kinematics_step,
                                 optimize_trajectory, p_samp, rollout_proxy, rollout_states,
                                 soft_fov, straight_line_seed)
from himos.sensors import FLC_DEFAULT, FLS_DEFAULT, DlcSpec, RobotState
from himos.world import GridSpec

from instances import fd_gradient, random_local_instance


def test_kinematics_examples():
    s = kinematics_step(RobotState(0, 0, 0), (0.5, 0, 0), 0.5)
    assert (s.x, s.y, s.theta) == pytest.approx((0.25, 0, 0))
    s = kinematics_step(RobotState(0, 0, math.pi / 2), (0.5, 0, 0), 0.5)
    assert (s.x, s.y, s.theta) == pytest.approx((0, 0.25, math.pi / 2))
    s = kinematics_step(RobotState(1, 2, 0), (0, 0, 1.0), 0.5)
    assert (s.x, s.y, s.theta) == pytest.approx((1, 2, 0.5))


def test_rollout_matches_stepwise_kinematics():
    rng = np.random.default_rng(0)
    U = rng.uniform(-0.5, 0.5, (25, 3))
    X = rollout_states([1.0, 2.0, 0.3], U, 0.5)
    x = RobotState(1.0, 2.0, 0.3)
    for k in range(25):
        x = kinematics_step(x, U[k], 0.5)
        assert X[k + 1, :2] == pytest.approx([x.x, x.y], abs=1e-12)
        assert math.cos(X[k + 1, 2]) == pytest.approx(math.cos(x.theta), abs=1e-12)


def test_evidence_magnitude_values():
    assert evidence_magnitude(3.0, FLS_DEFAULT) == pytest.approx(math.log(19))
    assert np.isfinite(evidence_magnitude(0.0, FLS_DEFAULT))
    assert evidence_magnitude(0.9 * 2.5, FLC_DEFAULT) < evidence_magnitude(0.1 * 2.5, FLC_DEFAULT)
    d = np.linspace(0, 6, 200)
    assert np.all(np.diff(evidence_magnitude(d, FLS_DEFAULT)) <= 1e-12)


def test_evidence_magnitude_derivative():
    d = np.linspace(0.01, 5.99, 97)
    _, g = evidence_magnitude(d, FLS_DEFAULT, with_grad=True)
    h = 1e-6
    fd = (evidence_magnitude(d + h, FLS_DEFAULT) - evidence_magnitude(d - h, FLS_DEFAULT)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_h_proxy_values():
    assert h_proxy(0.0) == math.log(2)
    assert h_proxy(2.0) == pytest.approx(math.log1p(math.exp(2)) - 2 / (1 + math.exp(-2)), rel=1e-12)
    assert h_proxy(2.0) == pytest.approx(0.3653, abs=1e-4)
    assert 0 <= h_proxy(50.0) < 1e-20
    with np.errstate(over="raise", invalid="raise"):
        assert np.isfinite(h_proxy(1e3))


def test_h_proxy_derivative_and_monotone():
    lam = np.linspace(0.01, 30, 3000)
    h = 1e-6
    fd = (h_proxy(lam + h) - h_proxy(lam - h)) / (2 * h)
    np.testing.assert_allclose(h_proxy_grad(lam), fd, rtol=1e-5, atol=1e-12)
    assert np.all(h_proxy_grad(lam) < 0)


def test_h_proxy_curvature_sign_region():
    # H''(L) = -s(1-s)(1 - L tanh(L/2)); zero at L* where L tanh(L/2) = 1
    from scipy.optimize import brentq
    lstar = brentq(lambda x: x * math.tanh(x / 2) - 1, 0.5, 3)
    assert lstar == pytest.approx(1.5434, abs=1e-3)

    def second(x, h=1e-4):
        return (h_proxy(x + h) - 2 * h_proxy(x) + h_proxy(x - h)) / h ** 2

    assert second(0.5) < 0 and second(1.0) < 0
    assert second(lstar + 0.1) > 0 and second(5.0) > 0


def test_p_samp():
    assert p_samp(0.0) == 0.0
    assert p_samp(1.0, 1.0) == pytest.approx(1 - math.exp(-1))
    assert p_samp(1e4) == 1.0
    lam = np.linspace(0, 10, 101)
    assert np.all(np.diff(p_samp(lam)) > 0) and np.all(p_samp(lam) < 1)


def test_soft_fov_examples():
    x = RobotState(0, 0, 0)
    prm = ProxySensorParams()
    # range factor is exactly one half at r_max; the bearing factor dead ahead is
    # sigmoid(gamma_a (1 - cos(fov/2))), 0.912 for the default steepness
    brg = 1 / (1 + math.exp(-prm.gamma_a * (1 - math.cos(math.radians(45)))))
    assert soft_fov(x, (6.0, 0.0), FLS_DEFAULT) == pytest.approx(0.5 * brg, rel=1e-6)
    assert 0.4 < soft_fov(x, (6.0, 0.0), FLS_DEFAULT) < 0.5
    # deep inside, alpha saturates at the bearing factor's dead-ahead value
    assert soft_fov(x, (3.0, 0.0), FLS_DEFAULT) == pytest.approx(brg, rel=1e-4)
    assert soft_fov(x, (3.0, 0.0), FLS_DEFAULT) > soft_fov(x, (3.0, 2.0), FLS_DEFAULT)
    behind = 1 / (1 + math.exp(prm.gamma_a * (1 + math.cos(math.radians(45)))))
    assert soft_fov(x, (-3.0, 0.0), FLS_DEFAULT) == pytest.approx(behind, rel=1e-4)
    assert behind < 2e-6
    assert soft_fov(x, (20.0, 0.0), FLS_DEFAULT) == 0.0
    L, eps = 1.0, prm.epsilon
    sig = 1 / (1 + math.exp(-L / (2 * eps)))
    sig2 = 1 / (1 + math.exp(-L / eps))
    assert soft_fov(x, (0.0, 0.0), DlcSpec(L)) == pytest.approx(sig ** 4, rel=1e-12)
    assert soft_fov(x, (0.5, 0.0), DlcSpec(L)) == pytest.approx(0.5 * sig2 * sig ** 2, rel=1e-12)
    assert soft_fov(RobotState(0, 0, math.pi / 2), (0.0, 0.45), DlcSpec(L)) > 0.7


def test_active_map_pooling():
    b = BeliefState(GridSpec(50.0, 50.0, 0.25))
    b.ell_s[:] = -3.0
    am = build_active_map(b, 4)
    assert am.shape == (50, 50) and am.centers.shape == (2500, 2)
    np.testing.assert_allclose(am.lam_fls, 3.0)
    rng = np.random.default_rng(0)
    b.ell_c[:] = rng.normal(size=b.ell_c.size)
    ident = build_active_map(b, 1)
    np.testing.assert_array_equal(ident.lam_flc, np.abs(b.ell_c))
    np.testing.assert_allclose(ident.centers, b.spec.centers())
    with pytest.raises(ValueError):
        build_active_map(b, 3)


def _proxy(n_s, n_c, n_d, lam=0.0):
    return ProxyBeliefState(np.full(n_s, lam), np.full(n_c, lam), np.zeros(n_d))


def test_rollout_proxy_zero_horizon_and_parked():
    cfg = LocalPlannerConfig()
    cell = np.array([[3.0, 0.0]])
    out = rollout_proxy(RobotState(0, 0, 0), np.zeros((0, 3)), _proxy(1, 1, 0, 1.0), cell, cell,
                        np.zeros((0, 2)), cfg)
    assert len(out) == 1 and out[0].lambda_fls[0] == 1.0
    K = 7
    out = rollout_proxy(RobotState(0, 0, 0), np.zeros((K, 3)), _proxy(1, 1, 0, 1.0), cell, cell,
                        np.zeros((0, 2)), cfg)
    alpha = soft_fov(RobotState(0, 0, 0), cell[0], FLS_DEFAULT, cfg.proxy)
    eta = evidence_magnitude(3.0, FLS_DEFAULT)
    assert out[-1].lambda_fls[0] == pytest.approx(1.0 + K * eta * alpha, rel=1e-6)
    assert all(np.all(np.diff([o.lambda_flc[0] for o in out]) >= 0) for _ in [0])


def test_rollout_proxy_far_cell_unchanged_and_down_only_on_candidates():
    cfg = LocalPlannerConfig()
    far = np.array([[-30.0, 0.0]])
    U = np.tile([0.5, 0.0, 0.0], (20, 1))
    out = rollout_proxy(RobotState(0, 0, 0), U, _proxy(1, 1, 1), far, far, np.array([[2.0, 0.0]]), cfg)
    assert out[-1].lambda_fls[0] < 1e-6 * evidence_magnitude(0.0, FLS_DEFAULT) * 20
    assert out[-1].lambda_down[0] > 1.0
    for a, b in zip(out, out[1:]):
        assert np.all(b.lambda_down >= a.lambda_down)


def _bare_problem(H, cfg, x0=(5.0, 5.0, 0.0), target=(10.0, 5.0), fls=None, cand=None):
    fls = np.zeros((0, 2)) if fls is None else np.asarray(fls, float)
    cand = np.zeros((0, 2)) if cand is None else np.asarray(cand, float)
    return LocalProblem(np.array(x0), H, np.array(target), fls, np.zeros(len(fls)), fls.copy(),
                        np.zeros(len(fls)), cand, cfg)


def test_cost_zero_controls_no_cells_is_terminal_only():
    cfg = LocalPlannerConfig()
    prob = _bare_problem(10, cfg)
    J, g, terms = evaluate(np.zeros((10, 3)), prob)
    assert terms.scout == 0 and terms.samp == 0
    assert J == pytest.approx(cfg.w_terminal * 25.0)


def test_sampling_weight_is_linear():
    cfg = LocalPlannerConfig()
    U = np.tile([0.4, 0.0, 0.0], (12, 1))
    cand = [[6.0, 5.0], [7.0, 5.1]]
    a = evaluate(U, _bare_problem(12, cfg, cand=cand), need_grad=False)[2]
    cfg2 = dataclasses.replace(cfg, w_samp=2 * cfg.w_samp)
    b = evaluate(U, _bare_problem(12, cfg2, cand=cand), need_grad=False)[2]
    assert a.samp < 0
    assert b.samp == pytest.approx(2 * a.samp, rel=1e-15)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    prob, U = random_local_instance(rng, [10, 20, 40][seed % 3], int(rng.integers(5, 21)))
    _, g, _ = evaluate(U, prob)
    f = fd_gradient(lambda u: evaluate(u, prob, need_grad=False)[0], U)
    rel = np.abs(g - f) / np.maximum(np.maximum(np.abs(g), np.abs(f)), 1e-6)
    assert rel.max() < 1e-4


def test_scout_cost_telescopes():
    rng = np.random.default_rng(4)
    prob, U = random_local_instance(rng, 20, 8)
    cfg = prob.cfg
    traj = rollout_proxy(RobotState(*prob.x0), U,
                         ProxyBeliefState(prob.fls_lam0, prob.flc_lam0, np.zeros(len(prob.cand_cells))),
                         prob.fls_cells, prob.flc_cells, prob.cand_cells, cfg)
    steps = sum(np.sum(h_proxy(a.lambda_fls) - h_proxy(b.lambda_fls)) for a, b in zip(traj, traj[1:]))
    direct = np.sum(h_proxy(traj[0].lambda_fls) - h_proxy(traj[-1].lambda_fls))
    assert steps == pytest.approx(direct, abs=1e-12)
    terms = evaluate(U, prob, need_grad=False)[2]
    assert terms.scout_fls == pytest.approx(-cfg.w_s * direct, rel=1e-9, abs=1e-12)


def test_loitering_decay():
    # candidate under the footprint for the whole horizon: the marginal value of more
    # verification intensity at the final step shrinks as the per-step rate grows
    H = 10
    grads = []
    for eta_down in (0.25, 0.5, 1.0, 2.0, 4.0):
        cfg = LocalPlannerConfig(proxy=ProxySensorParams(eta_down=eta_down))
        out = rollout_proxy(RobotState(0, 0, 0), np.zeros((H, 3)), _proxy(0, 0, 1), np.zeros((0, 2)),
                            np.zeros((0, 2)), np.array([[0.0, 0.0]]), cfg)
        lam = out[-1].lambda_down[0]
        assert lam == pytest.approx(eta_down * H, rel=1e-3)
        h = 1e-6
        dj = -cfg.w_samp * (p_samp(lam + h) - p_samp(lam - h)) / (2 * h)
        grads.append(abs(dj))
    assert np.all(np.diff(grads) < 0)


def test_horizon_steps():
    cfg = LocalPlannerConfig()
    assert horizon_steps(60.0, cfg) == 40
    assert horizon_steps(60.0, dataclasses.replace(cfg, h_max=200)) == 120
    assert horizon_steps(0.1, cfg) == 1


def test_straight_line_seed_reaches_target():
    cfg = LocalPlannerConfig()
    x0 = RobotState(1.0, 1.0, 2.0)
    U = straight_line_seed(x0, (4.0, 5.0), 40, cfg)
    X = rollout_states(x0.as_array(), U, cfg.dt)
    assert np.hypot(*(X[-1, :2] - [4.0, 5.0])) < 1e-9
    assert np.all(np.abs(U[:, :2]) <= cfg.v_max + 1e-12)


def _converged_belief():
    b = BeliefState(GridSpec(30.0, 30.0, 0.25))
    b.ell_s[:] = 10.0
    b.ell_c[:] = -10.0
    return b


def test_optimizer_heads_to_waypoint_within_bounds():
    cfg = LocalPlannerConfig()
    b = _converged_belief()
    x0 = RobotState(10.0, 10.0, 0.0)
    target = (15.0, 10.0)
    plan = optimize_trajectory(x0, b, CandidateMap(np.zeros(b.spec.n_cells, bool)), target, 10.0, cfg)
    seed = straight_line_seed(x0, target, plan.H, cfg)
    seed_end = rollout_states(x0.as_array(), seed, cfg.dt)[-1, :2]
    d_plan = np.hypot(*(plan.states[-1, :2] - target))
    assert d_plan <= np.hypot(*(seed_end - target)) + 1e-9
    assert d_plan < 5.0
    assert np.all(np.abs(plan.controls[:, :2]) <= cfg.v_max)
    assert np.all(np.abs(plan.controls[:, 2]) <= cfg.omega_max)
    X = rollout_states(x0.as_array(), plan.controls, cfg.dt)
    assert np.max(np.abs(X[:, :2] - plan.states[:, :2])) <= 1e-8


def test_optimizer_detours_over_candidate():
    cfg = LocalPlannerConfig()
    b = _converged_belief()
    x0 = RobotState(10.0, 10.0, 0.0)
    flags = np.zeros(b.spec.n_cells, bool)
    cell = b.spec.index_of(12.6, 11.1)
    flags[cell] = True
    b.ell_c[cell] = 3.0
    plan = optimize_trajectory(x0, b, CandidateMap(flags), (15.0, 10.0), 20.0, cfg)
    c = b.spec.center_of(cell)
    th = plan.states[:-1, 2]
    dx, dy = c[0] - plan.states[:-1, 0], c[1] - plan.states[:-1, 1]
    lon = np.abs(np.cos(th) * dx + np.sin(th) * dy)
    lat = np.abs(-np.sin(th) * dx + np.cos(th) * dy)
    assert np.any((lon <= 0.5) & (lat <= 0.5))
    assert plan.terms["samp"] < -0.5 * cfg.w_samp


def test_build_problem_restricts_to_reachable_cells():
    cfg = LocalPlannerConfig()
    b = BeliefState(GridSpec(50.0, 50.0, 0.25))
    am = build_active_map(b, 4)
    prob = build_problem(RobotState(5, 5, 0), am, b, CandidateMap(np.zeros(b.spec.n_cells, bool)),
                         (8, 5), 4, cfg)
    assert 0 < len(prob.fls_cells) < len(am.centers)
    assert len(prob.flc_cells) <= len(prob.fls_cells)
    reach = 4 * cfg.dt * cfg.v_max * math.sqrt(2) + cfg.fls.r_max + cfg.reach_margin
    assert np.all(np.hypot(prob.fls_cells[:, 0] - 5, prob.fls_cells[:, 1] - 5) <= reach)
