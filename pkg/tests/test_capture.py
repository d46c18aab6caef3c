import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erofinder.capture import (
    CaptureError,
    DecisionVector,
    SearchSettings,
    TargetManifold,
    TransferSolution,
    evaluate_exact,
    global_search,
    local_refine,
    mass_budget,
    optimize_transfer,
    rank_eros,
    replay,
    select_solution,
    transfer_cost,
    with_isp,
)
from erofinder.constants import DEFAULT, mjd_from_iso
from erofinder.kepler import propagate_universal, state_to_elements
from erofinder.neo import NeoRecord

FAST = SearchSettings(popsize=20, generations=60, restarts=2, seed=3)

# [PAPER] best transfer per object: (dv_total m/s, retrieved mass t, diameter m) at 300 s
TABLE2 = [
    ("2006 RH120", "2Hs", 58, 153.6, 4.83),
    ("2006 RH120", "2Hn", 107, 82.3, 3.92),
    ("2010 VQ98", "2V", 181, 46.8, 3.25),
    ("2007 UN12", "2P", 199, 42.3, 3.14),
    ("2011 UD21", "1Hs", 356, 21.9, 2.52),
    ("2011 UD21", "1V", 422, 17.9, 2.36),
    ("2011 UD21", "1Hn", 436, 17.2, 2.33),
    ("2000 SG344", "1P", 443, 16.8, 2.04),
]

# [PAPER] per-target minima below 500 m/s, km/s
TABLE1 = {
    "2006 RH120": {"2Hs": 0.058, "2Hn": 0.107, "2V": 0.187, "2P": 0.298},
    "2010 VQ98": {"2V": 0.181, "2Hn": 0.393, "2Hs": 0.487},
    "2007 UN12": {"2P": 0.199, "2Hs": 0.271, "2Hn": 0.327, "2V": 0.434},
    "2010 UE51": {"2Hs": 0.249, "2P": 0.340, "2V": 0.470, "2Hn": 0.474},
    "2008 EA9": {"2P": 0.328},
    "2011 UD21": {"1Hs": 0.356, "1V": 0.421, "1Hn": 0.436},
    "2009 BD": {"2Hn": 0.392, "2V": 0.487},
    "2008 UA202": {"2P": 0.425, "2Hs": 0.467, "2V": 0.400},
    "2011 BL45": {"2V": 0.400},
    "2011 MD": {"2V": 0.422},
    "2000 SG344": {"1P": 0.443, "1Hs": 0.449, "1Hn": 0.468},
    "1991 VG": {"2Hs": 0.465, "2V": 0.466},
}


def _fixture_solutions():
    return [(n, t, dv * 1e3) for n, tg in TABLE1.items() for t, dv in tg.items()]


@pytest.fixture(scope="module")
def hs_target(manifold_sets):
    return TargetManifold.from_set(*manifold_sets["2Hs"])


@pytest.fixture(scope="module")
def rh120(reference):
    return reference.find("2006 RH120")


@pytest.fixture(scope="module")
def rh120_sols(rh120, hs_target):
    return global_search(rh120, hs_target, settings=FAST, cases=[(2, "low"), (3, "low")])


# --- mass budget -------------------------------------------------------------------

@pytest.mark.parametrize("row", TABLE2[:-1], ids=[f"{r[0]}-{r[1]}" for r in TABLE2[:-1]])
def test_mass_budget_rows(row):
    _, _, dv, mass, diam = row
    m, d = mass_budget(dv)
    assert m == pytest.approx(mass, rel=0.02)
    assert d == pytest.approx(diam, rel=0.02)


def test_mass_budget_sg344_mass():
    m, _ = mass_budget(443)
    assert m == pytest.approx(16.8, rel=0.02)


@pytest.mark.xfail(strict=True, reason="16.8 t at 2.6 g/cm^3 is a 2.31 m sphere; the quoted "
                                       "2.04 m is inconsistent with the quoted mass")
def test_mass_budget_sg344_diameter():
    _, d = mass_budget(443)
    assert d == pytest.approx(2.04, rel=0.02)


@pytest.mark.parametrize("dv", [58, 199, 443])
def test_high_isp_retrieves_over_ten_times(dv):
    assert mass_budget(dv, isp=3000)[0] > 10 * mass_budget(dv, isp=300)[0]


def test_rh120_high_isp_magnitude():
    m, d = mass_budget(58, isp=3000)
    assert m > 1500 and d > 10


def test_mass_budget_errors():
    with pytest.raises(ValueError):
        mass_budget(0.0)
    with pytest.raises(ValueError):
        mass_budget(5000.0)
    with pytest.raises(ValueError):
        mass_budget(100.0, wet_mass=1000.0, dry_mass=2000.0)


@given(st.floats(1.0, 900.0), st.floats(1.0, 900.0))
def test_mass_decreases_with_dv(a, b):
    lo, hi = sorted((a, b))
    if hi - lo > 1e-6:
        assert mass_budget(hi)[0] < mass_budget(lo)[0]


def test_sphere_diameter_closed_form():
    m, d = mass_budget(100.0)
    assert math.pi / 6 * d**3 * 2600.0 == pytest.approx(m * 1e3, rel=1e-12)


# --- ranking -----------------------------------------------------------------------

def test_rank_table1_fixture():
    eros = rank_eros(_fixture_solutions())
    assert len(eros) == 12
    assert eros[0].designation == "2006 RH120" and eros[0].rank == 1
    assert [e.best_dv for e in eros] == sorted(e.best_dv for e in eros)


def test_rank_threshold_below_minimum_is_empty():
    assert rank_eros(_fixture_solutions(), threshold=50.0) == []


def test_rank_lists_qualifying_targets_by_dv():
    vq = next(e for e in rank_eros(_fixture_solutions()) if e.designation == "2010 VQ98")
    assert [t for t, _ in vq.targets] == ["2V", "2Hn", "2Hs"]


def test_rank_threshold_is_strict():
    assert rank_eros([("a", "2P", 500.0)], threshold=500.0) == []
    assert len(rank_eros([("a", "2P", 499.9)], threshold=500.0)) == 1


def test_rank_keeps_best_per_target():
    e = rank_eros([("a", "2P", 300.0), ("a", "2P", 200.0), ("a", "2V", 250.0)])[0]
    assert e.targets == (("2P", 200.0), ("2V", 250.0))


# --- transfer model ----------------------------------------------------------------

def _self_transfer(target, tau_l):
    """NEO placed on the upstream conic of a manifold trajectory."""
    jac = float(target.jacobi[10])
    x = DecisionVector(mjd_from_iso("2030-01-01"), jac, 0.25, 0.0, tau_l)
    T = target.exact(jac, 0.25)[2]
    x = dataclasses.replace(x, tau_m=T + 200.0 / DEFAULT.nd_to_days(1.0))
    dummy = NeoRecord("d", 1.0, 0.01, 0.0, 0.0, 0.0, 0.0, 60000.0, 20.0)
    legs = evaluate_exact(dummy, target, x)
    dep = propagate_universal(legs.manifold_state, -tau_l * 86400.0, DEFAULT.mu_sun)
    a, e, i, raan, argp, nu = state_to_elements(dep, DEFAULT.mu_sun)
    E = 2 * math.atan(math.sqrt((1 - e) / (1 + e)) * math.tan(nu / 2))
    neo = NeoRecord("self", a / DEFAULT.au, e, i, raan, argp, (E - e * math.sin(E)) % (2 * math.pi),
                    legs.departure, 25.0)
    return neo, x


@pytest.mark.parametrize("tau_l", [30.0, 120.0])
def test_self_transfer_costs_nothing(hs_target, tau_l):
    neo, x = _self_transfer(hs_target, tau_l)
    dep, ins = transfer_cost(neo, hs_target, x)
    assert dep < 1e-6 and ins < 1e-6  # km/s


def test_table_and_exact_agree_on_a_member(hs_target):
    neo, x = _self_transfer(hs_target, 60.0)
    exact = sum(transfer_cost(neo, hs_target, x))
    table = sum(transfer_cost(neo, hs_target, x, exact=False))
    assert exact < 1e-6
    assert table < 0.05  # phase interpolation only


def test_insertion_downstream_of_section_rejected(hs_target, rh120):
    jac = float(hs_target.jacobi[10])
    x = DecisionVector(mjd_from_iso("2028-08-01"), jac, 0.1, 0.1, 100.0)
    with pytest.raises(CaptureError):
        evaluate_exact(rh120, hs_target, x)


def test_halo_j_range_excludes_bifurcation_member(hs_target):
    lo, hi = hs_target.j_range
    assert lo == hs_target.jacobi[0] and hi == hs_target.jacobi[-2]


# --- optimization ------------------------------------------------------------------

def test_global_search_respects_bounds(rh120_sols, rh120):
    from erofinder.neo import validity_window
    v_lo, v_hi = validity_window(rh120)
    for s in rh120_sols:
        x = s.decision
        assert s.departure <= s.insertion <= s.arrival
        assert v_lo <= s.departure <= v_hi
        assert s.constraint_ok
        assert s.dv_total == pytest.approx(s.dv_dep + s.dv_ins)
        assert s.dv_total >= 0
        assert 0 <= x.sigma < 1


def test_search_is_deterministic(rh120, hs_target):
    kw = dict(settings=dataclasses.replace(FAST, generations=20), cases=[(0, "low")])
    a = global_search(rh120, hs_target, **kw)
    b = global_search(rh120, hs_target, **kw)
    assert [s.as_record() for s in a] == [s.as_record() for s in b]


def test_refine_monotone_and_idempotent(rh120_sols, rh120, hs_target):
    s0 = rh120_sols[0]
    s1 = local_refine(s0, rh120, hs_target, FAST)
    assert s1.dv_total <= s0.dv_total
    s2 = local_refine(s1, rh120, hs_target, FAST)
    assert s2.dv_total <= s1.dv_total
    assert s1.dv_total - s2.dv_total < 0.1


def test_refine_recovers_perturbed_solution(rh120_sols, rh120, hs_target):
    # [DERIVED] two days on every epoch; the basin returns within 5 m/s
    s1 = local_refine(rh120_sols[0], rh120, hs_target, FAST)
    x = s1.decision
    px = dataclasses.replace(x, t_ins=x.t_ins + 2.0, tau_l=x.tau_l - 2.0,
                             tau_m=x.tau_m + 2.0 / DEFAULT.nd_to_days(1.0))
    legs = evaluate_exact(rh120, hs_target, px)
    pert = dataclasses.replace(s1, decision=px, dv_dep=legs.dv_dep * 1e3, dv_ins=legs.dv_ins * 1e3)
    back = local_refine(pert, rh120, hs_target, FAST)
    assert back.dv_total < s1.dv_total + 5.0


def test_replay_closes(rh120_sols, rh120, hs_target):
    for s in rh120_sols:
        rp = replay(s, rh120, hs_target)
        assert rp.ok(1.0, 1e-3), rp


def test_restricted_window_is_worse(rh120, hs_target, rh120_sols):
    early = global_search(rh120, hs_target, window=("2016-01-01", "2022-12-31"), settings=FAST,
                          cases=[(2, "low"), (3, "low")])
    assert min(s.dv_total for s in early) > min(s.dv_total for s in rh120_sols)


def test_optimize_sorted_and_selection(rh120, hs_target):
    sols = optimize_transfer(rh120, hs_target, settings=FAST, refine_top=1,
                             cases=[(2, "low"), (3, "low")])
    dvs = [s.dv_total for s in sols]
    assert dvs == sorted(dvs)
    assert select_solution(sols, 0.0) is sols[0]
    pick = select_solution(sols, 1e9)
    assert pick.duration_years == min(s.duration_years for s in sols)
    with pytest.raises(CaptureError):
        select_solution([])


def test_with_isp_updates_mass(rh120_sols):
    s = rh120_sols[0]
    hi = with_isp(s, 3000.0)
    assert hi.isp == 3000.0 and hi.mass_t > 10 * with_isp(s, 300.0).mass_t
    assert isinstance(hi, TransferSolution)


def test_solution_record_fields(rh120_sols):
    rec = rh120_sols[0].as_record()
    for k in ("designation", "target", "dv_total", "duration_years", "x_t_ins", "x_revs"):
        assert k in rec
    assert np.isfinite(rec["dv_total"])
