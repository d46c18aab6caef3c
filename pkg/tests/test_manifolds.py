import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erofinder.constants import DEFAULT
from erofinder.cr3bp.dynamics import equilibrium_points, flow, jacobi_constant
from erofinder.lpo import differential_correct, lyapunov_seed, orbit_at_jacobi, with_stability
from erofinder.manifolds import (
    SECTION_ANGLE,
    ManifoldError,
    ManifoldSet,
    element_envelope,
    globalize_family,
    globalize_to_section,
    manifold_elements_at_epoch,
    manifold_initial_conditions,
    replay_to_orbit,
    section_phase_projection,
    separatrix_check,
    stable_direction,
    winding_number,
)

J_FIG5 = 3.0004448196  # [PAPER] loop figure energy


@pytest.fixture(scope="module")
def l2_orbit(families):
    return with_stability(orbit_at_jacobi(families["2P"], J_FIG5))


def _loop(orbit, n=60, epsilon=1e-6):
    _, ics = manifold_initial_conditions(orbit, n, epsilon)
    secs = [globalize_to_section(ic, orbit.point) for ic in ics]
    assert all(s is not None for s in secs)
    return np.array([s[0] for s in secs])


def _proj(states):
    class _T:
        def __init__(self, s):
            self.section_state = s
    return section_phase_projection([_T(s) for s in states])


def _area(p):
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# --- initial conditions ------------------------------------------------------------

def test_zero_epsilon_lies_on_orbit(l2_orbit):
    phases, ics = manifold_initial_conditions(l2_orbit, 8, epsilon=0.0)
    for ph, ic in zip(phases, ics):
        on = flow(l2_orbit.state, ph * l2_orbit.period) if ph > 0 else l2_orbit.state
        assert np.max(np.abs(ic - on)) < 1e-10


def test_displacement_keeps_energy_to_second_order(l2_orbit):
    _, ics = manifold_initial_conditions(l2_orbit, 16)
    dj = np.abs(jacobi_constant(ics) - l2_orbit.jacobi)
    assert dj.max() < 1e-9


@pytest.mark.parametrize("epsilon,periods", [(1e-6, 1), (1e-8, 2)])
def test_stable_direction_contracts(l2_orbit, epsilon, periods):
    # second-order growth along the unstable direction caps the horizon at larger epsilon
    phases, ics = manifold_initial_conditions(l2_orbit, 6, epsilon=epsilon)
    states, _ = stable_direction(l2_orbit, phases)
    t = periods * l2_orbit.period
    for ic, on in zip(ics, states):
        gap0 = np.linalg.norm(ic - on)
        assert np.linalg.norm(flow(ic, t) - flow(on, t)) < gap0


def test_bad_point_count(l2_orbit):
    with pytest.raises(ValueError):
        manifold_initial_conditions(l2_orbit, 0)


# --- section states ----------------------------------------------------------------

@pytest.mark.parametrize("target", ["1P", "1Hn", "2P", "2V", "2Hs"])
def test_section_states_on_half_plane(manifold_sets, target):
    _, ms = manifold_sets[target]
    sec = ms.section_state[ms.reached]
    ang = np.arctan2(sec[:, 1], sec[:, 0] + DEFAULT.mu)
    assert np.max(np.abs(ang - SECTION_ANGLE[ms.point])) < 1e-9
    assert np.max(np.abs(jacobi_constant(sec) - ms.jacobi[ms.reached])) < 1e-9
    assert np.all(ms.transfer_time[ms.reached] > 0)


@pytest.mark.parametrize("target", ["1P", "2P"])
def test_section_is_far_from_earth(manifold_sets, target):
    # order of a few tenths of an AU
    _, ms = manifold_sets[target]
    sec = ms.section_state[ms.reached]
    d = np.hypot(sec[:, 0] - (1 - DEFAULT.mu), sec[:, 1])
    assert 0.2 < np.median(d) < 0.8


@pytest.mark.parametrize("target", ["1P", "2P"])
def test_planar_manifolds_have_zero_inclination(manifold_sets, target):
    _, ms = manifold_sets[target]
    assert np.all(ms.elements[ms.reached, 2] == 0.0)
    assert np.all(ms.section_state[ms.reached, 2] == 0.0)


def test_section_replay_returns_to_initial_condition(manifold_sets):
    _, ms = manifold_sets["2Hs"]
    # forward replay of an unstable arc of about 18 time units: a few km
    for t in ms.trajectories(member=40)[::40]:
        assert np.max(np.abs(replay_to_orbit(t) - t.initial_state)) < 1e-7


def test_l1_interior_l2_exterior(manifold_sets):
    _, m1 = manifold_sets["1P"]
    _, m2 = manifold_sets["2P"]
    assert np.all(m1.elements[m1.reached, 0] < 1.0)
    assert np.all(m2.elements[m2.reached, 0] > 1.0)


# --- (r, r-dot) loops --------------------------------------------------------------

def test_loop_collapses_towards_libration_energy(l2_orbit):
    ref = np.ptp(_proj(_loop(l2_orbit)), axis=0)
    st, tc = lyapunov_seed("L2", "planar", 1e-6)
    tiny = with_stability(differential_correct(st, tc, "planar", point="L2"))
    assert tiny.jacobi == pytest.approx(equilibrium_points().jacobi["L2"], abs=1e-10)
    ext = np.ptp(_proj(_loop(tiny, 24, epsilon=1e-8)), axis=0)
    assert ext[0] < 1e-4 and np.all(ext < 1e-3 * ref)


def test_fig5_loop_encloses_area(l2_orbit):
    p = _proj(_loop(l2_orbit, 100))
    assert _area(p) > 1e-3  # AU km/s


def test_vertical_loops_narrower_than_planar(families):
    orbs = {k: with_stability(orbit_at_jacobi(families[k], J_FIG5)) for k in ("2P", "2V")}
    ext = {k: np.ptp(_proj(_loop(o, 60))[:, 0]) for k, o in orbs.items()}
    assert ext["2V"] < ext["2P"]


def test_winding_number():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    assert abs(winding_number([0.5, 0.5], sq)) == 1
    assert winding_number([2.0, 0.5], sq) == 0


@pytest.mark.parametrize("target,point", [("2P", "L2"), ("1P", "L1")])
def test_separatrix_transit(manifold_sets, target, point):
    # states enclosed by the tube cut transit the neck, states outside do not
    _, ms = manifold_sets[target]
    top = int(np.argmax([ms.jacobi[ms.member == k][0] for k in ms.member_ids()]))
    res = separatrix_check(ms.trajectories(member=ms.member_ids()[top]), point, n_samples=10)
    assert len(res) == 10
    assert all(inner for inner, _ in res)
    assert not any(outer for _, outer in res)


def test_separatrix_needs_a_loop(manifold_sets):
    _, ms = manifold_sets["2P"]
    with pytest.raises(ManifoldError):
        separatrix_check(ms.trajectories(member=0)[:2], "L2")


# --- insertion-epoch rotation ------------------------------------------------------

def _lop(el):
    return (el[3] + el[4]) % (2 * math.pi)


@pytest.fixture(scope="module")
def halo_traj(manifold_sets):
    return manifold_sets["2Hn"][1].trajectories(member=30)[7]


def test_epoch_rotation_identity(halo_traj):
    el = manifold_elements_at_epoch(halo_traj, halo_traj.t_ref)
    np.testing.assert_allclose(el, halo_traj.elements_at_section, atol=1e-14)


def test_epoch_rotation_full_period(halo_traj):
    T_days = DEFAULT.t_earth / 86400.0
    el = manifold_elements_at_epoch(halo_traj, halo_traj.t_ref + T_days)
    d = (_lop(el) - _lop(halo_traj.elements_at_section) + math.pi) % (2 * math.pi) - math.pi
    assert abs(d) < 1e-10
    np.testing.assert_allclose(el[:3], halo_traj.elements_at_section[:3], atol=0)


@given(st.floats(-4000.0, 4000.0))
@settings(max_examples=30, deadline=None)
def test_epoch_rotation_shifts_perihelion_longitude(halo_traj, dt):
    T_days = DEFAULT.t_earth / 86400.0
    el = manifold_elements_at_epoch(halo_traj, halo_traj.t_ref + dt)
    want = 2 * math.pi * dt / T_days
    d = (_lop(el) - _lop(halo_traj.elements_at_section) - want + math.pi) % (2 * math.pi) - math.pi
    assert abs(d) < 1e-9


def test_epoch_rotation_half_period(manifold_sets):
    t = manifold_sets["2P"][1].trajectories(member=10)[0]
    el = manifold_elements_at_epoch(t, t.t_ref + DEFAULT.t_earth / 86400.0 / 2)
    d = (_lop(el) - _lop(t.elements_at_section)) % (2 * math.pi)
    assert d == pytest.approx(math.pi, abs=1e-10)
    assert el[3] == t.elements_at_section[3]  # planar: node untouched


# --- envelopes ---------------------------------------------------------------------

def test_planar_envelope_inclination_zero(manifold_sets):
    env = element_envelope(manifold_sets["2P"][1])
    assert np.all(env.i_min == 0) and np.all(env.i_max == 0)


@pytest.mark.parametrize("point", ["1", "2"])
def test_halo_r_extent_inside_planar(manifold_sets, point):
    p = element_envelope(manifold_sets[point + "P"][1])
    h = element_envelope(manifold_sets[point + "Hn"][1])
    assert p.rp_min.min() < h.rp_min.min() and h.rp_max.max() < p.rp_max.max()
    assert p.ra_min.min() < h.ra_min.min() and h.ra_max.max() < p.ra_max.max()


def test_north_south_envelopes_agree(manifold_sets):
    n = element_envelope(manifold_sets["2Hn"][1])
    s = element_envelope(manifold_sets["2Hs"][1])
    for q in ("rp_min", "rp_max", "ra_min", "ra_max", "i_min", "i_max"):
        np.testing.assert_allclose(getattr(n, q), getattr(s, q), atol=1e-9)


@pytest.mark.parametrize("target", ["1V", "2V"])
def test_vertical_fit_residuals(manifold_sets, target):
    env = element_envelope(manifold_sets[target][1])
    res = env.fit_residuals()
    assert max(res[q] for q in ("rp_min", "rp_max", "ra_min", "ra_max")) < 1e-3
    assert max(res["i_min"], res["i_max"]) < 0.05


def test_envelope_evaluate_clamps(manifold_sets):
    env = element_envelope(manifold_sets["2V"][1])
    lo = float(env.jacobi.min())
    v_in, c_in = env.evaluate(lo)
    v_out, c_out = env.evaluate(lo - 1e-4)
    assert not c_in and c_out
    assert v_in == v_out


def test_envelope_needs_samples(manifold_sets):
    ms = manifold_sets["2P"][1]
    with pytest.raises(ManifoldError):
        element_envelope(ms.select(ms.phase < 0.1))


# --- persistence -------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, families):
    ms = globalize_family(families["1P"], n_points=6, members=[0, 50], family_hash="abc")
    p = tmp_path / "m.npz"
    ms.save(p)
    back = ManifoldSet.load(p)
    assert back.family == ms.family and back.family_hash == "abc"
    for name in ("member", "jacobi", "phase", "section_state", "elements", "reached"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ms, name))


def test_load_rejects_other_schema(tmp_path, families):
    import json
    ms = globalize_family(families["1P"], n_points=3, members=[0])
    p = tmp_path / "m.npz"
    ms.save(p)
    with np.load(p) as z:
        data = {k: z[k] for k in z.files}
    meta = json.loads(str(data["meta"]))
    meta["schema"] = 99
    data["meta"] = np.array(json.dumps(meta))
    np.savez(p, **data)
    with pytest.raises(ManifoldError):
        ManifoldSet.load(p)
