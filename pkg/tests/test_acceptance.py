"""End-to-end acceptance checks; each test records one PASS/FAIL line."""

import hashlib
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from enantiocontrol.design import j011_system, j122_system, j233_system, oscillation_counts, run_design
from enantiocontrol.dynamics import propagate, selectivity, write_level_csv, write_population_csv
from enantiocontrol.lie import (
    check_controllable,
    check_enantioselective,
    check_reachable_controllable,
    check_simultaneous_enantioselective,
)
from enantiocontrol.rotor import preset

FOUR = ["w1_x", "w1_z", "w2_y", "w2_z"]


def _record(name, ok, detail):
    ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
    assert ok, detail


@pytest.fixture(scope="module")
def carvone():
    return preset("carvone")


def _simulate(name, spec):
    system, seq = run_design(name, spec)
    plus, minus = system.models()
    result = propagate((plus, minus), seq, system.ensemble(plus))
    return system, seq, result


def test_criterion_1_lie_dimension_table(carvone):
    t0 = time.perf_counter()
    plus, minus = j011_system(carvone).models()
    got = {
        "J011 four fields": check_controllable(plus, FOUR).dim_found,
        "J011 five-field composite": check_enantioselective(plus, minus, FOUR + ["w3_x"]).dim_found,
    }
    drops = [check_controllable(plus, [f for f in FOUR if f != d]).dim_found for d in FOUR]
    p3, m3 = j233_system(carvone).models()
    got["J233 single"] = check_controllable(p3).dim_found
    got["J233 composite"] = check_enantioselective(p3, m3).dim_found
    pc, mc = j122_system(carvone).models()
    got["J122 reachable single"] = check_reachable_controllable(pc, [0, 1, 2]).dim_found
    got["J122 reachable composite"] = check_simultaneous_enantioselective(pc, mc, [0, 1, 2]).dim_found
    elapsed = time.perf_counter() - t0
    want = {
        "J011 four fields": 48,
        "J011 five-field composite": 96,
        "J233 single": 360,
        "J233 composite": 720,
        "J122 reachable single": 24,
        "J122 reachable composite": 48,
    }
    ok = got == want and max(drops) < 48 and elapsed < 60
    _record("1 Lie-dimension table", ok, f"{got}, drop-one {drops}, {elapsed:.1f} s")


def test_criterion_2_m_separation(carvone):
    t0 = time.perf_counter()
    system, seq, result = _simulate("fig3", carvone)
    elapsed = time.perf_counter() - t0
    plus = system.models()[0]
    final = result.states[1][-1]
    f_low = float(np.abs(final[0, plus.index(0, 0, 0)]) ** 2)
    top = [plus.index(1, 1, -1), plus.index(1, 1, 1)]
    f_top = float(np.sum(np.abs(final[1, top]) ** 2))
    ok = len(seq.pulses) == 5 and min(f_low, f_top) >= 0.99 and elapsed < 10
    _record("2 M-separation sequence", ok, f"fidelities {f_low:.5f} / {f_top:.5f}, {elapsed:.2f} s")


def test_criterion_3_full_enantioselective(carvone):
    t0 = time.perf_counter()
    system, seq, result = _simulate("fig4", carvone)
    S = selectivity(result, system.target_level)
    _, _, lin = _simulate("fig4_linear3", carvone)
    lin_best = max(abs(selectivity(lin, lv)) for lv in system.levels)
    elapsed = time.perf_counter() - t0
    order = [p.field_id for p in seq.pulses]
    expected = ["w1_x", "w2_z", "w1_z", "w2_y", "w1_z", "w3_x", "w2_y", "w2_z", "w3_x", "w1_z", "w2_y", "w1_x"]
    ok = order == expected and abs(S) >= 0.98 and lin_best <= 0.95 and elapsed < 30
    _record("3 twelve-pulse enantioselective", ok, f"|S| {abs(S):.5f}, linear control max |S| {lin_best:.4f}, {elapsed:.2f} s")


def test_criterion_4_synchronized_three_wave_mixing(carvone):
    t0 = time.perf_counter()
    system, seq, result = _simulate("fig5", carvone)
    elapsed = time.perf_counter() - t0
    S = selectivity(result, system.target_level)
    counts = oscillation_counts(result, seq.pulses[0], (2, -1))
    ok = abs(S) >= 0.98 and counts == [3, 5, 7] and elapsed < 10
    _record("4 synchronized circular scheme", ok, f"|S| {abs(S):.5f}, maxima {counts}, {elapsed:.2f} s")


PROPERTY_TESTS = [
    "test_wigner.py::test_orthogonality",
    "test_rotor.py",
    "test_dynamics.py::test_propagation_unitarity",
    "test_dynamics.py::test_step_halving_convergence",
    "test_dynamics.py::test_rabi_analytic",
    "test_lie.py::test_closure_invariances",
    "test_lie.py::test_agrees_with_exact_rank_oracle",
]


def test_criterion_5_property_suites():
    here = Path(__file__).parent
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *[str(here / t) for t in PROPERTY_TESTS]],
        capture_output=True, text=True, cwd=here.parent,
    )
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    _record("5 property suites", proc.returncode == 0, tail)


def _csv_digest(name, spec, tmp):
    _, _, result = _simulate(name, spec)
    tmp.mkdir(parents=True, exist_ok=True)
    write_population_csv(result, tmp / "p.csv")
    write_level_csv(result, tmp / "l.csv")
    return [hashlib.sha256((tmp / f).read_bytes()).hexdigest() for f in ("p.csv", "l.csv")]


def test_criterion_6_determinism(carvone, tmp_path):
    names = ["fig3", "fig4", "fig4_linear3", "fig5", "fig5_linear"]
    same = {n: _csv_digest(n, carvone, tmp_path / n / "a") == _csv_digest(n, carvone, tmp_path / n / "b") for n in names}
    _record("6 byte-identical CSV", all(same.values()), ", ".join(f"{n} {'same' if v else 'DIFFERENT'}" for n, v in same.items()))
