import numpy as np
import pytest

from tisim import DdeSolution, ModelParams, integrate_dde, zero_history


def _params(**kw):
    return ModelParams(**kw)


def test_zero_history_is_zero():
    assert zero_history(-3.7) == 0.0
    assert zero_history(0.0) == 0.0


def test_grid_shapes_and_times():
    sol = integrate_dde(_params(), (1.0, 0.0, 0.0), 2.0, step=0.25)
    assert isinstance(sol, DdeSolution)
    assert sol.times.shape == sol.tumor.shape == sol.effectors.shape == sol.il2.shape
    assert np.array_equal(sol.times, np.arange(9) * 0.25)


def test_rejects_misaligned_delay_and_horizon():
    with pytest.raises(ValueError, match="delay"):
        integrate_dde(_params(recruitment_delay=1.0), (1.0, 0.0, 0.0), 3.0, step=0.3)
    with pytest.raises(ValueError, match="t_stop"):
        integrate_dde(_params(), (1.0, 0.0, 0.0), 1.05, step=0.1)
    with pytest.raises(ValueError):
        integrate_dde(_params(), (1.0, 0.0, 0.0), 1.0, step=0.0)
    with pytest.raises(ValueError):
        integrate_dde(_params(), (1.0, -2.0, 0.0), 1.0)


def test_frozen_system_stays_put():
    p = _params(growth_rate=0.0, kill_rate=0.0, stimulation_rate=0.0,
                effector_death_rate=0.0, recruitment_rate=0.0,
                il2_production_rate=0.0)
    sol = integrate_dde(p, (3.0, 2.0, 0.0), 5.0, step=0.5)
    assert np.all(sol.tumor == 3.0)
    assert np.all(sol.effectors == 2.0)
    assert np.all(sol.il2 == 0.0)


def test_decoupled_effector_decay_matches_closed_form():
    # With no tumor and no field the effector equation is linear decay.
    p = _params(recruitment_rate=0.0, stimulation_rate=0.0)
    sol = integrate_dde(p, (0.0, 5.0, 0.0), 10.0, step=0.01)
    exact = 5.0 * np.exp(-p.effector_death_rate * sol.times)
    assert np.all(sol.tumor == 0.0)
    assert np.all(sol.il2 == 0.0)
    assert np.allclose(sol.effectors, exact, rtol=1e-10, atol=0.0)


def test_logistic_tumor_growth_matches_closed_form():
    # Immune side switched off: the tumor equation is exactly logistic with
    # carrying capacity volume/crowding.
    p = _params(kill_rate=0.0, stimulation_rate=0.0, recruitment_rate=0.0,
                il2_production_rate=0.0)
    cap = p.volume / p.crowding
    sol = integrate_dde(p, (1.0, 0.0, 0.0), 200.0, step=0.02)
    t = sol.times
    exact = cap / (1.0 + (cap - 1.0) * np.exp(-p.growth_rate * t))
    assert np.allclose(sol.tumor, exact, rtol=1e-8, atol=0.0)
    assert np.all(np.diff(sol.tumor) > 0.0)
    assert sol.tumor[-1] < cap


def test_fourth_order_convergence_with_active_delay():
    p = _params(recruitment_rate=0.035, recruitment_delay=1.5)
    init = (1.0, 0.0, 0.0)
    ref = integrate_dde(p, init, 50.0, step=0.00125)

    def err(step):
        sol = integrate_dde(p, init, 50.0, step=step)
        stride = round(step / 0.00125)
        d = sol.tumor - ref.tumor[::stride]
        return np.max(np.abs(d) / np.maximum(1.0, np.abs(ref.tumor[::stride])))

    e1, e2 = err(0.05), err(0.025)
    assert e2 < e1
    assert 12.0 < e1 / e2 < 20.0


def test_step_halving_agrees_to_tight_tolerance():
    p = _params(recruitment_rate=0.035, recruitment_delay=2.0)
    a = integrate_dde(p, (1.0, 0.0, 0.0), 200.0, step=0.01)
    b = integrate_dde(p, (1.0, 0.0, 0.0), 200.0, step=0.005)
    rel = np.abs(a.tumor - b.tumor[::2]) / np.maximum(1.0, np.abs(b.tumor[::2]))
    assert rel.max() < 1e-6


def test_delay_is_immaterial_without_recruitment():
    init = (20.0, 10.0, 1.0)
    base = integrate_dde(_params(recruitment_rate=0.0), init, 30.0, step=0.05)
    for theta in (1.0, 2.5):
        other = integrate_dde(_params(recruitment_rate=0.0, recruitment_delay=theta),
                              init, 30.0, step=0.05)
        assert np.array_equal(base.tumor, other.tumor)
        assert np.array_equal(base.effectors, other.effectors)
        assert np.array_equal(base.il2, other.il2)


def test_history_feeds_lagged_recruitment_exactly():
    # Only recruitment is live and the local tumor stays zero, so effectors
    # ramp at rate c * H while the lag window still reads the past, then stop.
    # Every stage of the step ending on the seam reads the history branch, so
    # the ramp and the plateau are both exact.
    c, H, theta, h = 0.05, 100.0, 2.0, 0.01
    p = _params(growth_rate=0.0, kill_rate=0.0, stimulation_rate=0.0,
                effector_death_rate=0.0, il2_production_rate=0.0,
                recruitment_rate=c, recruitment_delay=theta)
    sol = integrate_dde(p, (0.0, 0.0, 0.0), 6.0, step=h, history=lambda t: H)
    assert np.all(sol.tumor == 0.0)
    k_edge = round(theta / h)
    ramp = np.minimum(sol.times, theta) * c * H
    assert np.allclose(sol.effectors, ramp, rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(sol.effectors[k_edge:]) == 0.0)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_unstable_step_aborts_instead_of_returning_garbage():
    # RK4 blows up once step * decay rate crosses its stability bound.
    p = _params(il2_decay_rate=50.0, recruitment_rate=0.035)
    with pytest.raises(RuntimeError):
        integrate_dde(p, (1.0, 0.0, 0.0), 400.0, step=0.1)


def test_zero_horizon_returns_initial_point():
    sol = integrate_dde(_params(), (2.0, 3.0, 0.5), 0.0)
    assert sol.times.tolist() == [0.0]
    assert sol.tumor.tolist() == [2.0]
    assert sol.effectors.tolist() == [3.0]
    assert sol.il2.tolist() == [0.5]
