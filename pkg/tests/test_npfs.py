import warnings

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from appfkit import npfs, pfcore
from appfkit.netmodel import LineRecord, LoadProfile, build_ybus, load_network, reduce_network
from appfkit.npfs import NpfsConfig
from appfkit.pfcore import VoltageState

from conftest import SMALL, fixture_path
from oracles import dense_power_flow, flat_guess


def _solve(net, cfg=NpfsConfig(eps_newton=1e-10), loads=None):
    f = npfs.prepare(net)
    return npfs.npfs_solve(f, net, net.nominal_loads if loads is None else loads,
                           pfcore.flat_start(net), cfg)


@pytest.mark.parametrize("name", SMALL)
def test_matches_dense_oracle(name):
    net = load_network(fixture_path(name))
    vs, st_ = _solve(net)
    assert st_.converged
    ref = dense_power_flow(net, net.nominal_loads.complex, flat_guess(net))
    np.testing.assert_allclose(vs.phasor, ref, atol=1e-9)


def test_two_bus_closed_form():
    net = load_network(fixture_path("2bus"))
    vs, _ = _solve(net)
    v = vs.phasor[0]
    y = 1 - 10j
    assert v * np.conj(y * (v - 1)) == pytest.approx(-0.1 - 0.05j, abs=1e-10)


@pytest.mark.parametrize("policy, every", [("full", 1), ("frozen", 1), ("every_m", 2)])
def test_update_policies_converge_to_same_state(policy, every):
    net = load_network(fixture_path("mesh10"))
    ref, _ = _solve(net)
    vs, st_ = _solve(net, NpfsConfig(eps_newton=1e-10, d_update_policy=policy, d_update_every=every))
    assert st_.converged
    np.testing.assert_allclose(vs.phasor, ref.phasor, atol=1e-9)


@pytest.mark.parametrize("k", [0, 1, 3, 6])
def test_any_truncation_converges(k):
    net = load_network(fixture_path("feeder3"))
    vs, st_ = _solve(net, NpfsConfig(eps_newton=1e-10, k_neumann=k))
    assert st_.converged
    assert st_.neumann_terms_per_iter == k
    assert len(st_.step_times) == st_.newton_iters


def test_iteration_cap_reports_not_converged():
    net = load_network(fixture_path("feeder3"))
    _, st_ = _solve(net, NpfsConfig(eps_newton=1e-14, max_newton_iters=1))
    assert not st_.converged
    assert st_.newton_iters == 1
    assert st_.final_residual_inf > 0


def test_zero_iterations_when_start_is_solution():
    net = load_network(fixture_path("feeder3"))
    vs, _ = _solve(net)
    _, st_ = npfs.npfs_solve(npfs.prepare(net), net, net.nominal_loads, vs, NpfsConfig(eps_newton=1e-8))
    assert st_.converged and st_.newton_iters == 0


def test_config_validation():
    for bad in (dict(eps_newton=0), dict(k_neumann=-1), dict(max_newton_iters=-1),
                dict(d_update_policy="sometimes"), dict(d_update_every=0)):
        with pytest.raises(ValueError):
            NpfsConfig(**bad)
    cfg = NpfsConfig(d_update_policy="every_m", d_update_every=3)
    assert [cfg.refresh_at(i) for i in range(5)] == [True, False, False, True, False]


def test_neumann_series_limit_is_exact_solve(small_net, rng):
    vs = VoltageState.from_phasor(pfcore.flat_start(small_net).phasor * (1 + 0.02 * rng.standard_normal(small_net.n)))
    f = npfs.prepare(small_net)
    c = npfs.perturbation(small_net, vs)
    rhs = rng.standard_normal(2 * small_net.n)
    exact = np.linalg.solve(pfcore.build_n_ybus(small_net).toarray()
                            + pfcore.block_diag_mult(c).toarray(), rhs)
    y, info = npfs.neumann_apply(f, c, rhs, 40)
    assert not info.diverged
    np.testing.assert_allclose(y, exact, rtol=1e-9, atol=1e-12)


def test_newton_step_matches_direct_solve(small_net, rng):
    vs = VoltageState.from_phasor(pfcore.flat_start(small_net).phasor * (1 + 0.02 * rng.standard_normal(small_net.n)))
    g = pfcore.mismatch(small_net, vs, small_net.nominal_loads)
    jac = pfcore.jacobian_polar(small_net, vs)
    exact = spla.spsolve(jac.tocsc(), -g)
    f = npfs.prepare(small_net)
    c = npfs.perturbation(small_net, vs)
    b = -pfcore.to_complex(g) / vs.phasor
    y, _ = npfs.neumann_apply(f, c, pfcore.to_real(b), 40)
    np.testing.assert_allclose(pfcore.solve_r_block(vs, y), exact, rtol=1e-8, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SMALL), st.floats(0.05, 0.9), st.integers(0, 1000))
def test_term_contraction_bounded_by_margin(name, inv_margin, seed):
    # scale D so the margin is 1 / inv_margin; every term must shrink by at least that factor
    net = load_network(fixture_path(name))
    vs, _ = _solve(net)
    f = npfs.prepare(net)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base_margin = npfs.convergence_margin(net, vs, f, iters=500)
    c = npfs.perturbation(net, vs) * base_margin * inv_margin
    rhs = np.random.default_rng(seed).standard_normal(2 * net.n)
    _, info = npfs.neumann_apply(f, c, rhs, 8, guard=False)
    ratios = np.array(info.term_norms[1:]) / np.array(info.term_norms[:-1])
    assert np.all(ratios <= 1.01 * inv_margin)


def test_guard_truncates_growing_series():
    net = load_network(fixture_path("2bus"))
    vs, _ = _solve(net)
    f = npfs.prepare(net)
    c = npfs.perturbation(net, vs) * 2 * npfs.convergence_margin(net, vs, f, warn=False)
    rhs = np.array([1.0, 0.5])
    _, raw = npfs.neumann_apply(f, c, rhs, 5, guard=False)
    assert raw.diverged and raw.terms_used == 6
    y, guarded = npfs.neumann_apply(f, c, rhs, 5, guard=True)
    assert guarded.diverged and guarded.terms_used == 1
    np.testing.assert_array_equal(y, guarded.first)


def test_margin_two_bus_is_exact():
    # for one bus N<y>/|y| is orthogonal and <d(c)>/|c| a rotation, so the bound is tight
    net = load_network(fixture_path("2bus"))
    vs, _ = _solve(net)
    c = npfs.perturbation(net, vs)[0]
    assert npfs.convergence_margin(net, vs) == pytest.approx(abs(1 - 10j) / abs(c), rel=1e-10)


def test_margin_zero_current_is_infinite():
    net = load_network(fixture_path("2bus"))
    vs = VoltageState.from_phasor([1.0])
    assert npfs.convergence_margin(net, vs) == np.inf
    assert npfs.admittance_current_ratio(net, vs) == np.inf


def test_margin_warning():
    y = build_ybus([LineRecord(0, 1, 1 - 3j)], None, 2)
    net = reduce_network(y, [0], [1.0], LoadProfile([-0.4], [-0.2]))
    vs, st_ = _solve(net)
    assert st_.converged
    with pytest.warns(UserWarning, match="margin"):
        m = npfs.convergence_margin(net, vs)
    assert 1 < m < 10


def test_check_margin_recorded():
    net = load_network(fixture_path("feeder3"))
    _, st_ = _solve(net, NpfsConfig(eps_newton=1e-10, check_margin=True))
    assert st_.margin > 1e10  # the no-load flat start carries (almost) no current


def test_admittance_current_ratio_positive(small_net):
    vs, _ = _solve(small_net)
    assert npfs.admittance_current_ratio(small_net, vs) > 1


def test_bus_paired_order():
    net = load_network(fixture_path("mesh10"))
    order = npfs.bus_paired_order(net)
    n = net.n
    np.testing.assert_array_equal(np.sort(order), np.arange(2 * n))
    np.testing.assert_array_equal(order[1::2], order[::2] + n)


def test_infeasible_load_does_not_converge():
    net = load_network(fixture_path("2bus"))
    _, st_ = _solve(net, NpfsConfig(max_newton_iters=30), loads=LoadProfile([-50.0], [-20.0]))
    assert not st_.converged
