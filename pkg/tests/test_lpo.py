import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erofinder.constants import AU_KM
from erofinder.cr3bp.dynamics import equilibrium_points, flow, jacobi_constant
from erofinder.lpo import (
    CorrectionError,
    OrbitFamily,
    differential_correct,
    halo_branch,
    halo_seed_richardson,
    lyapunov_seed,
    orbit_at_jacobi,
    stability,
)

J_LYAP = (3.0000030032, 3.0007982727)  # [PAPER] family plot range
J_HALO_START = 3.0008189806  # [PAPER]


def _closure(orbit):
    return np.max(np.abs(flow(orbit.state, orbit.period) - orbit.state))


def test_planar_l2_family_range(families):
    lo, hi = families["2P"].jacobi_range
    assert lo == pytest.approx(J_LYAP[0], abs=1e-5)
    assert hi == pytest.approx(J_LYAP[1], abs=1e-5)


@pytest.mark.parametrize("label", ["1H", "2H"])
def test_halo_families_start_at_bifurcation(families, label):
    assert families[label].jacobi_range[1] == pytest.approx(J_HALO_START, abs=1e-5)


@pytest.mark.parametrize("label,size", [("1H", (240e3, 660e3)), ("2H", (250e3, 675e3))])
def test_smallest_halo_excursions(families, label, size):
    fam = families[label]
    first = fam[int(np.argmax(fam.jacobi))]
    ex = first.excursions() * AU_KM
    assert ex[0] == pytest.approx(size[0], rel=0.10)
    assert ex[1] == pytest.approx(size[1], rel=0.10)


@pytest.mark.parametrize("label", ["1P", "1V", "1H", "2P", "2V", "2H"])
def test_members_are_periodic_and_on_their_energy(families, label):
    fam = families[label]
    for m in fam.members[:: max(1, len(fam) // 5)]:
        assert _closure(m) < 1e-8
        assert jacobi_constant(m.state, m.mu) == pytest.approx(m.jacobi, abs=1e-12)
        assert m.state[1] == 0.0 and m.state[3] == 0.0


@pytest.mark.parametrize("label", ["1P", "2P", "1V", "2V", "1H", "2H"])
def test_monodromy_reciprocal_pairs(families, label):
    m = families[label][len(families[label]) // 2]
    st_ = stability(m)
    assert st_.unstable_value > 1
    assert st_.unstable_value * st_.stable_value == pytest.approx(1.0, rel=1e-5)
    # two unit multipliers (periodicity and energy) form a Jordan block: a small
    # monodromy error splits them as 1 +- sqrt(delta), keeping sum and product
    w = st_.eigenvalues
    pair = w[np.argsort(np.abs(w - 1.0))[:2]]
    assert np.all(np.abs(pair - 1.0) < 1e-2)
    assert abs(pair.sum() - 2.0) < 1e-6
    assert abs(pair.prod() - 1.0) < 1e-6


def test_family_is_ordered_by_decreasing_jacobi(families):
    for fam in families.values():
        assert np.all(np.diff(fam.jacobi) < 0)


def test_halo_branch_and_mirror(families):
    north = families["2H"]
    south = north.mirrored()
    mid = len(north) // 2
    assert halo_branch(north[mid]) == "north"
    assert halo_branch(south[mid]) == "south"
    assert south.label == "2Hs" and north.label == "2Hn"
    assert np.allclose(south[mid].state * [1, 1, -1, 1, 1, -1], north[mid].state)


def test_csv_roundtrip(families, tmp_path):
    fam = families["1V"]
    fam.to_csv(tmp_path / "v.csv")
    back = OrbitFamily.from_csv(tmp_path / "v.csv")
    assert back.kind == fam.kind and back.point == fam.point and len(back) == len(fam)
    assert np.array_equal(back.jacobi, fam.jacobi)
    assert np.array_equal(back[3].state, fam[3].state)
    assert np.array_equal(back[3].stable_eigvec, fam[3].stable_eigvec)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.05, 0.95))
def test_orbit_at_jacobi_hits_target(families, w):
    fam = families["2P"]
    lo, hi = fam.jacobi_range
    j = lo + w * (hi - lo)
    orb = orbit_at_jacobi(fam, j)
    assert orb.jacobi == pytest.approx(j, abs=1e-12)
    assert _closure(orb) < 1e-8


def test_orbit_at_jacobi_outside_range(families):
    with pytest.raises(ValueError):
        orbit_at_jacobi(families["2P"], 3.01)


@pytest.mark.parametrize("point", ["L1", "L2"])
def test_lyapunov_seed_corrects(point):
    s, t = lyapunov_seed(point, "planar", 1e-4)
    orb = differential_correct(s, t, "planar", point=point)
    xl = equilibrium_points().x_of(point)
    assert abs(orb.state[0] - xl) < 2e-4
    assert _closure(orb) < 1e-9


def test_richardson_seed_is_close_to_a_halo():
    s, t = halo_seed_richardson("L2", 200000.0, "north")
    orb = differential_correct(s, t, "halo-north", point="L2")
    assert np.max(np.abs(orb.state - s)) < 2e-3
    assert orb.kind == "halo-north"


def test_bad_inputs():
    with pytest.raises(ValueError):
        lyapunov_seed("L3", "planar", 1e-4)
    with pytest.raises(ValueError):
        halo_seed_richardson("L2", -1.0)
    with pytest.raises(CorrectionError):
        differential_correct([1.2, 0, 0, 0, 0.5, 0], 0.5, "planar", max_iter=3)
