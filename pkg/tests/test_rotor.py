import math
import warnings

import numpy as np
import pytest
import scipy.constants as sc
from hypothesis import given, strategies as st

from enantiocontrol.rotor import (
    DEBYE_VCM_TO_MHZ,
    ConfigError,
    FieldSpec,
    RotorSpec,
    SpectralIsolationWarning,
    asym_levels,
    asym_state,
    build_subsystem,
    circular_coupling,
    enantiomer_pair,
    lab_dipole_element,
    level_energy,
    mirror,
    preset,
    rate_per_debye,
    time_unit_seconds,
)
from enantiocontrol.lie import generalized_pauli
from oracles import euler_grid, lab_dipole_quadrature

TWO_PI = 2 * math.pi


# --- energies ------------------------------------------------------------------


def test_low_j_energies_closed_form(carvone):
    A, B, C = (TWO_PI * x for x in (carvone.A, carvone.B, carvone.C))
    assert level_energy(carvone, 0, 0) == 0.0
    assert level_energy(carvone, 1, -1) == pytest.approx(B + C, rel=1e-13)
    assert level_energy(carvone, 1, 0) == pytest.approx(A + C, rel=1e-13)
    assert level_energy(carvone, 1, 1) == pytest.approx(A + B, rel=1e-13)
    root = math.sqrt((B - C) ** 2 + (A - C) * (A - B))
    j2 = sorted([2 * (A + B + C) - 2 * root, 4 * A + B + C, A + 4 * B + C, A + B + 4 * C, 2 * (A + B + C) + 2 * root])
    got = [level_energy(carvone, 2, tau) for tau in range(-2, 3)]
    assert got == pytest.approx(j2, rel=1e-12)


@given(
    st.floats(0.5, 5.0),
    st.floats(0.05, 0.95),
    st.floats(0.05, 0.95),
    st.integers(0, 5),
)
def test_level_structure_properties(A, rb, rc, J):
    B = A * rb
    C = B * rc
    spec = RotorSpec(A=A * 1000, B=B * 1000, C=C * 1000, mu=(1, 1, 1))
    states = asym_levels(J, spec)
    assert len(states) == (2 * J + 1) ** 2
    E = [s.energy for s in states if s.M == 0]
    assert all(np.diff(E) >= -1e-9)
    # trace of the J block equals sum of diagonal elements J(J+1)(A+B+C)*(2J+1)/3
    A2, B2, C2 = (TWO_PI * x for x in (spec.A, spec.B, spec.C))
    assert sum(E) == pytest.approx(J * (J + 1) * (2 * J + 1) * (A2 + B2 + C2) / 3, rel=1e-10, abs=1e-9)
    for s in states:
        c = np.array(s.coeffs)
        assert np.linalg.norm(c) == pytest.approx(1.0, abs=1e-12)
        # the largest entry is positive (for near-ties, one of the tied entries)
        near = np.abs(c) >= np.abs(c).max() - 1e-6
        assert np.any(c[near] > 0)


def test_rotor_spec_validation():
    with pytest.raises(ConfigError):
        RotorSpec(A=1, B=2, C=0.5, mu=(1, 0, 0))
    with pytest.raises(ConfigError):
        RotorSpec(A=1, B=1, C=1, mu=(1, 0, 0))
    with pytest.raises(ConfigError):
        RotorSpec(A=3, B=2, C=1, mu=(1, 0, 0), flip_axis="q")
    with pytest.raises(ConfigError):
        preset("no-such-molecule")
    spec = preset("carvone")
    assert RotorSpec.from_dict(spec.to_dict()) == spec
    assert -1 < spec.kappa < 0


def test_conversion_constant_against_codata():
    debye = 1e-21 / sc.c  # C m
    expected = debye * 100.0 / sc.h / 1e6
    assert DEBYE_VCM_TO_MHZ == pytest.approx(expected, rel=1e-12)
    assert DEBYE_VCM_TO_MHZ == pytest.approx(0.5034, abs=5e-5)
    spec = preset("carvone")
    assert time_unit_seconds(spec) == pytest.approx(1 / (TWO_PI * spec.B * 1e6))
    assert rate_per_debye(spec, 1000.0) == pytest.approx(1000.0 * expected / spec.B)


# --- dipole matrix elements --------------------------------------------------------


@pytest.fixture(scope="module")
def grid():
    return euler_grid(8)


@pytest.mark.parametrize(
    "lo, hi",
    [
        ((0, 0, 0), (1, 0, 1)),
        ((0, 0, 0), (1, -1, 0)),
        ((0, 0, 0), (1, 1, -1)),
        ((1, 0, -1), (1, 1, 0)),
        ((1, -1, 1), (2, -1, 1)),
        ((1, -1, 0), (2, 0, 1)),
        ((2, -1, 1), (2, 0, 0)),
        ((2, -2, -1), (2, 1, 0)),
        ((1, 1, 0), (2, 2, 1)),
    ],
)
def test_lab_dipole_matches_euler_quadrature(carvone, grid, lo, hi):
    bra = asym_state(carvone, *hi)
    ket = asym_state(carvone, *lo)
    ref = lab_dipole_quadrature((bra.J, bra.M, bra.coeffs), (ket.J, ket.M, ket.coeffs), carvone.signed_mu(), grid)
    got = [lab_dipole_element(ax, bra, ket, carvone) for ax in "xyz"]
    assert np.allclose(got, ref, atol=1e-10)


def _random_system(draw):
    J = draw(st.integers(0, 2))
    taus = lambda j: st.integers(-j, j)
    lo = (J, draw(taus(J)))
    mid = (J + 1, draw(taus(J + 1)))
    hi_tau = draw(taus(J + 1).filter(lambda t: t != mid[1]))
    hi = (J + 1, hi_tau)
    pol = st.sampled_from(["x", "y", "z", "sigma+", "sigma-"])
    fields = [FieldSpec("f1", lo, mid, draw(pol)), FieldSpec("f2", lo, hi, draw(pol))]
    a, b = sorted([mid, hi], key=lambda lv: lv[1])
    fields.append(FieldSpec("f3", a, b, draw(pol)))
    return [lo, mid, hi], fields


@st.composite
def random_systems(draw):
    return _random_system(draw)


def _dm_allowed(pol):
    return {"x": {-1, 1}, "y": {-1, 1}, "z": {0}, "sigma+": {1}, "sigma-": {-1}}[pol]


@given(random_systems())
def test_couplings_hermitian_and_sparse(system):
    levels, fields = system
    spec = preset("carvone")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SpectralIsolationWarning)
        try:
            model = build_subsystem(spec, levels, fields)
        except ConfigError:
            return  # accidental degeneracy in the drawn levels
    for f in fields:
        H = model.couplings[f.field_id]
        assert np.array_equal(H, H.conj().T)
        lo_idx = set(model.level_indices(f.lower))
        up_idx = set(model.level_indices(f.upper))
        lower, upper = sorted([f.lower, f.upper], key=lambda lv: spec and model.H0[model.level_indices(lv)[0]])
        for i, j in zip(*np.nonzero(H)):
            assert {i, j} <= lo_idx | up_idx and not ({i, j} <= lo_idx or {i, j} <= up_idx)
            # Delta M measured from the lower-energy state to the upper one
            lo_i, up_i = (i, j) if model.H0[i] < model.H0[j] else (j, i)
            dM = model.basis[up_i].M - model.basis[lo_i].M
            assert dM in _dm_allowed(f.polarization)
        # structural zeros are exact zeros
        assert np.all((np.abs(H) > 1e-12) | (H == 0))


def test_enantiomer_flip_is_exact(j011_models):
    plus, minus = j011_models
    for fid in plus.field_ids():
        comp = plus.components[fid][2]  # c axis
        if np.any(comp):
            assert np.array_equal(plus.couplings[fid], -minus.couplings[fid])
        else:
            assert np.array_equal(plus.couplings[fid], minus.couplings[fid])
    assert np.array_equal(mirror(minus).couplings["w3_x"], plus.couplings["w3_x"])


# --- coupling patterns ------------------------------------------------------------

G = lambda j, k: generalized_pauli("G", j, k, 7)
F = lambda j, k: generalized_pauli("F", j, k, 7)


def _equal_up_to_ground_phase(X, Y):
    """X == s D^dag Y D with D = diag(p, 1, ..., 1), p a power of i, s = +-1."""
    for p in (1, 1j, -1, -1j):
        d = np.ones(X.shape[0], dtype=complex)
        d[0] = p
        Z = np.conj(d)[:, None] * Y * d[None, :]
        for s in (1, -1):
            if np.allclose(X, s * Z, atol=1e-12):
                return True
    return False


def test_j011_patterns(carvone, j011_models):
    mu_a, mu_b, mu_c = carvone.mu
    plus, _ = j011_models
    expected = {
        "w1_x": mu_b / math.sqrt(6) * (G(1, 4) - G(1, 2)),
        "w1_z": -mu_b / math.sqrt(3) * G(1, 3),
        "w2_y": mu_a / (2 * math.sqrt(2)) * (G(3, 5) + G(4, 6) - G(2, 6) - G(3, 7)),
        "w2_z": mu_a / 2 * (-F(2, 5) + F(4, 7)),
        "w3_x": mu_c / math.sqrt(6) * (F(1, 5) - F(1, 7)),
    }
    for fid, ref in expected.items():
        assert _equal_up_to_ground_phase(1j * plus.couplings[fid], ref), fid


def _pattern(H, tol=1e-12):
    return {(int(i) + 1, int(j) + 1): abs(H[i, j]) for i, j in zip(*np.nonzero(np.abs(np.triu(H)) > tol))}


def test_j122_circular_patterns(j122_models):
    plus, minus = j122_models
    sp = _pattern(plus.couplings["w1_s+"])
    assert set(sp) == {(1, 6), (2, 7), (3, 8)}
    assert sp[(2, 7)] / sp[(1, 6)] == pytest.approx(math.sqrt(3), rel=1e-12)
    assert sp[(3, 8)] / sp[(1, 6)] == pytest.approx(math.sqrt(6), rel=1e-12)
    sm = _pattern(plus.couplings["w2_s-"])
    assert set(sm) == {(5, 9), (6, 10), (7, 11), (8, 12)}
    assert sm[(8, 12)] == pytest.approx(sm[(5, 9)], rel=1e-12)
    assert sm[(6, 10)] / sm[(5, 9)] == pytest.approx(math.sqrt(1.5), rel=1e-12)
    assert sm[(7, 11)] == pytest.approx(sm[(6, 10)], rel=1e-12)
    z = _pattern(plus.couplings["w3_z"])
    assert set(z) == {(1, 10), (2, 11), (3, 12)}
    assert z[(1, 10)] / z[(2, 11)] == pytest.approx(math.sqrt(3) / 2, rel=1e-12)
    assert z[(3, 12)] == pytest.approx(z[(1, 10)], rel=1e-12)
    assert np.array_equal(plus.couplings["w3_z"], -minus.couplings["w3_z"])
    assert np.array_equal(plus.couplings["w1_s+"], minus.couplings["w1_s+"])


def test_j233_pattern_and_flip(j233_models):
    plus, minus = j233_models
    assert plus.N == 19
    pat = _pattern(plus.couplings["w1_x"])
    ref = {
        (1, 6): 15, (5, 12): 15, (2, 7): 10, (4, 11): 10, (3, 8): 6,
        (3, 10): 6, (2, 9): 3, (4, 9): 3, (1, 8): 1, (5, 10): 1,
    }
    assert set(pat) == set(ref)
    unit = pat[(1, 8)]
    for key, sq in ref.items():
        assert pat[key] / unit == pytest.approx(math.sqrt(sq), rel=1e-12)
    flips = {f: np.array_equal(plus.couplings[f], -minus.couplings[f]) for f in plus.field_ids()}
    assert flips == {"w1_x": False, "w1_y": False, "w2_y": False, "w2_z": False, "w3_x": True}


def test_circular_equals_commutator_combination(j122_models):
    # sigma+ = x + J(y), sigma- = x - J(y) with J(X) = [iH0, X]/omega
    plus, _ = j122_models
    spec = plus.spec
    lo, mid, hi = plus.levels
    lin = build_subsystem(spec, plus.levels, [FieldSpec("x", lo, mid, "x"), FieldSpec("y", lo, mid, "y")])
    omega = plus.frequencies["w1_s+"]
    iH0 = -1j * np.diag(lin.H0)  # drift generator -iH0 in this convention
    ix, iy = 1j * lin.couplings["x"], 1j * lin.couplings["y"]
    Jy = (iH0 @ iy - iy @ iH0) / omega
    # the drift generator is -iH0, so the commutator picks up a sign
    assert np.allclose(1j * circular_coupling(lin, lin.couplings["x"], lin.couplings["y"], omega, 1), ix - Jy, atol=1e-12)
    assert np.allclose(1j * plus.couplings["w1_s+"], ix - Jy, atol=1e-12)


# --- subsystem construction errors ------------------------------------------------


def test_ambiguous_resonance_rejected():
    spec = RotorSpec(A=3000.0, B=1000.0, C=1000.0, mu=(1.0, 1.0, 1.0))
    with pytest.raises(ConfigError, match="several level gaps"):
        build_subsystem(spec, [(0, 0), (1, 0), (1, 1)], [FieldSpec("f", (0, 0), (1, 0), "x")])


def test_field_levels_must_be_in_subsystem(carvone):
    with pytest.raises(ConfigError):
        build_subsystem(carvone, [(0, 0), (1, 0)], [FieldSpec("f", (0, 0), (2, 0), "x")])
    with pytest.raises(ConfigError):
        FieldSpec("f", (0, 0), (1, 0), "w")


def test_isolation_warning(carvone):
    # (1,-1) -> (2,-1) is near other gaps? build with warnings captured; the
    # warning must name the field when any out-of-subsystem gap coincides
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        build_subsystem(carvone, [(0, 0), (1, -1)], [FieldSpec("f", (0, 0), (1, -1), "z")])
    assert all(issubclass(w.category, SpectralIsolationWarning) for w in rec)
    degenerate = RotorSpec(A=3000.0, B=1000.0, C=1000.0, mu=(1.0, 1.0, 1.0))
    with pytest.warns(SpectralIsolationWarning):
        build_subsystem(degenerate, [(0, 0), (1, 0)], [FieldSpec("f", (0, 0), (1, 0), "x")])


def test_enantiomer_pair_shares_basis(j011_models):
    plus, minus = j011_models
    assert plus.basis == minus.basis
    assert plus.enantiomer_sign == 1 and minus.enantiomer_sign == -1
    assert enantiomer_pair(plus)[1].couplings.keys() == minus.couplings.keys()
