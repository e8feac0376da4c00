import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from enantiocontrol.design import (
    FULL_ENANTIO_FIELDS,
    CertificationError,
    DesignSystem,
    SyncError,
    TransitionTarget,
    build_full_enantio_sequence,
    build_m_separation_sequence,
    build_single_cycle_sequence,
    build_sync_3wm_sequence,
    extract_cycle_couplings,
    j011_system,
    parse_sequence_document,
    sequence_document,
    synchronize,
    transition_strength,
)
from enantiocontrol.dynamics import PulseSpec, sequence_unitary
from enantiocontrol.lie import reachable_partition
from enantiocontrol.rotor import ConfigError

PI = math.pi
RATIOS = np.array([1.0, math.sqrt(3), math.sqrt(6)])


def _brute_force_sync(g, theta, parity, tol, n_max=12):
    """Enumerate every n-tuple directly; smallest least-squares area within tol."""
    best = None
    for s in (1, -1):
        for n in itertools.product(range(n_max + 1), repeat=len(g)):
            if parity == "all_odd" and any(k % 2 == 0 for k in n):
                continue
            if parity == "all_even" and any(k % 2 for k in n):
                continue
            t = s * theta + 2 * PI * np.array(n)
            A = float(g @ t / (g @ g))
            if A <= 0 or np.abs(g * A - t).max() > tol:
                continue
            if best is None or A < best[0]:
                best = (A, s, n)
    return best


def test_sync_quarter_cycles_1_3_6():
    targets = [TransitionTarget((k,), g, PI / 2, "all_odd") for k, g in enumerate(RATIOS)]
    sol = synchronize(targets, tol=0.12)
    assert sol.n == (3, 5, 7) and sol.mirror == -1
    assert sol.area / PI == pytest.approx(5.50226, abs=1e-5)
    ref = _brute_force_sync(RATIOS, PI / 2, "all_odd", 0.12)
    assert sol.area == pytest.approx(ref[0], rel=1e-12)
    assert sol.max_residual <= 0.12


def test_sync_fails_with_tight_tolerance():
    targets = [TransitionTarget((k,), g, PI / 2, "all_odd") for k, g in enumerate(RATIOS)]
    with pytest.raises(SyncError, match="best residual"):
        synchronize(targets, tol=1e-4, n_max=6)


@given(
    st.lists(st.floats(0.3, 3.0), min_size=1, max_size=3),
    st.sampled_from([PI / 2, PI]),
    st.sampled_from(["all_even", "all_odd", "free"]),
    st.floats(0.05, 0.6),
)
def test_sync_agrees_with_enumeration(gs, theta, parity, tol):
    g = np.array(gs)
    targets = [TransitionTarget((k,), x, theta, parity) for k, x in enumerate(gs)]
    ref = _brute_force_sync(g, theta, parity, tol, n_max=6)
    try:
        sol = synchronize(targets, tol=tol, n_max=6)
    except SyncError:
        assert ref is None
        return
    assert sol.max_residual <= tol + 1e-12
    assert np.allclose(sol.achieved, g * sol.area)
    if parity != "free":
        assert len({k % 2 for k in sol.n}) == 1
    if ref is not None:
        assert sol.area <= ref[0] + 1e-9


def test_transition_target_validation():
    with pytest.raises(ConfigError):
        TransitionTarget((0,), 0.0, PI)
    with pytest.raises(ConfigError):
        TransitionTarget((0,), 1.0, PI, "some")
    with pytest.raises(ConfigError):
        synchronize([TransitionTarget((0,), 1.0, PI, "all_odd"), TransitionTarget((1,), 1.0, PI, "free")])


def test_cycle_couplings(j122_models):
    plus, _ = j122_models
    parts = [c for c in reachable_partition(plus) if len(c) == 3]
    cycles = extract_cycle_couplings(plus, parts, ["w1_s+", "w2_s-", "w3_z"])
    g1 = np.array([c.couplings["w1_s+"] for c in cycles])
    assert g1 / g1[0] == pytest.approx(RATIOS, rel=1e-12)
    g2 = np.array([c.couplings["w2_s-"] for c in cycles])
    assert g2 / g2[0] == pytest.approx([1.0, 1.0, math.sqrt(2 / 3)], rel=1e-12)
    with pytest.raises(ConfigError):
        extract_cycle_couplings(plus, [[3]], ["w1_s+"])


def test_transition_strength_is_collective(j011_models):
    plus, _ = j011_models
    # w1_x drives |0,0,0> to a superposition of two states: strength sqrt(2) * element
    assert transition_strength(plus, "w1_x") == pytest.approx(math.sqrt(2) * 3 / math.sqrt(6), rel=1e-12)
    assert transition_strength(plus, "w1_z") == pytest.approx(math.sqrt(3), rel=1e-12)


def test_m_separation(j011_models):
    plus, _ = j011_models
    seq = build_m_separation_sequence(plus)
    assert [p.field_id for p in seq.pulses] == ["w1_x", "w2_z", "w1_z", "w2_y", "w1_z"]
    assert seq.certificate["fidelity_M-1_to_ground"] >= 0.99
    assert seq.certificate["fidelity_M+1_to_top_pair"] >= 0.99
    with pytest.raises(CertificationError):
        build_m_separation_sequence(plus, min_fidelity=1.5)


def test_full_enantio_sequence_field_order(j011_models):
    seq = build_full_enantio_sequence(j011_models)
    assert [p.field_id for p in seq.pulses] == list(FULL_ENANTIO_FIELDS)
    assert len(seq.pulses) == 12
    # pulses 11 and 12 share one window
    assert (seq.pulses[10].t_start, seq.pulses[10].duration) == (seq.pulses[11].t_start, seq.pulses[11].duration)
    assert abs(seq.certificate["selectivity"]) >= 0.98


def test_single_cycle(j011_models):
    seq = build_single_cycle_sequence(j011_models)
    assert abs(seq.certificate["selectivity"]) >= 0.999


@pytest.fixture(scope="module")
def sync_seq(j122_models):
    return build_sync_3wm_sequence(j122_models)


def _s_exact(models, pulses, level):
    plus, minus = models
    init = [0, 1, 2]
    out = 0.0
    for sign, m in ((1, plus), (-1, minus)):
        U = sequence_unitary(m, pulses)
        idx = m.level_indices(level)
        out += sign * np.mean([np.sum(np.abs(U[idx, i]) ** 2) for i in init])
    return out


def test_sync_sequence_certificate(sync_seq):
    c = sync_seq.certificate
    assert abs(c["selectivity"]) >= 0.98
    assert c["oscillation_counts"] == [3, 5, 7]
    assert c["pulse1_cycles"] == [3, 5, 7]


def _shift(pulses, deltas):
    return [PulseSpec(p.field_id, p.t_start, p.duration, p.area, p.envelope, p.phase + d) for p, d in zip(pulses, deltas)]


@given(st.floats(-PI, PI), st.floats(-PI, PI))
def test_selectivity_invariant_under_gauge_phases(j122_models, sync_seq, d1, d2):
    # relabeling state phases shifts the three pulse phases by (d1, d2, d1 + d2)
    s0 = _s_exact(j122_models, sync_seq.pulses, (2, 0))
    s1 = _s_exact(j122_models, _shift(sync_seq.pulses, (d1, d2, d1 + d2)), (2, 0))
    assert s1 == pytest.approx(s0, abs=1e-10)


def test_common_phase_changes_loop_phase(j122_models, sync_seq):
    # adding pi to every pulse is a loop-phase shift of pi: the enantiomers swap
    s0 = _s_exact(j122_models, sync_seq.pulses, (2, 0))
    s1 = _s_exact(j122_models, _shift(sync_seq.pulses, (PI, PI, PI)), (2, 0))
    assert s1 == pytest.approx(-s0, abs=1e-10)


def test_sequence_document_round_trip(j011_models, carvone):
    seq = build_m_separation_sequence(j011_models[0])
    system = j011_system(carvone)
    doc = json.loads(json.dumps(sequence_document(seq, system)))
    seq2, system2 = parse_sequence_document(doc)
    assert seq2.pulses == seq.pulses
    assert seq2.name == seq.name
    assert system2.to_dict() == system.to_dict()
    assert DesignSystem.from_dict(system.to_dict()).models()[0].N == 7
    with pytest.raises(ConfigError):
        parse_sequence_document({"no": "pulses"})
