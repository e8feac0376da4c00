"""Asymmetric-top rotor levels, lab-frame dipole couplings and subsystem models.

Energies are stored as angular frequencies (2*pi*MHz). The rigid-rotor
Hamiltonian uses the Ir representation: the symmetric-top K axis is the
a axis, x is b and y is c.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import constants

from .wigner import SymTopKet, d1_element

__all__ = [
    "RotorSpec",
    "AsymTopState",
    "FieldSpec",
    "SubsystemModel",
    "ConfigError",
    "DEBYE_VCM_TO_MHZ",
    "asym_levels",
    "level_block",
    "rotor_matrix",
    "mirror",
    "level_energy",
    "lab_dipole_element",
    "build_subsystem",
    "circular_coupling",
    "enantiomer_pair",
    "SpectralIsolationWarning",
    "asym_state",
    "PRESETS",
    "preset",
    "time_unit_seconds",
    "rate_per_debye",
]

# h * (MHz) equivalent of 1 Debye in a 1 V/cm field
DEBYE_VCM_TO_MHZ = 1e-21 / constants.c * 100.0 / constants.h / 1e6

_AXES = ("a", "b", "c")


class ConfigError(ValueError):
    """Invalid rotor, field or subsystem configuration."""


class SpectralIsolationWarning(UserWarning):
    """A field frequency also matches a gap to a level outside the subsystem."""


RESONANCE_RTOL = 1e-6


@dataclass(frozen=True)
class RotorSpec:
    """Rotational constants (MHz), body-frame dipole (Debye) and chiral flip axis."""

    A: float
    B: float
    C: float
    mu: tuple[float, float, float]
    flip_axis: str = "c"
    enantiomer_sign: int = 1
    name: str = ""

    def __post_init__(self):
        if not (self.A >= self.B >= self.C > 0):
            raise ConfigError(f"rotational constants must satisfy A >= B >= C > 0, got {self.A}, {self.B}, {self.C}")
        if self.A == self.C:
            raise ConfigError("spherical top has no asymmetric-top structure")
        if len(self.mu) != 3:
            raise ConfigError("dipole must have three body-frame components")
        if self.flip_axis not in _AXES:
            raise ConfigError(f"flip axis must be one of {_AXES}")
        if self.enantiomer_sign not in (1, -1):
            raise ConfigError("enantiomer sign must be +1 or -1")
        object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))

    @property
    def kappa(self) -> float:
        """Ray's asymmetry parameter."""
        return (2 * self.B - self.A - self.C) / (self.A - self.C)

    def signed_mu(self) -> tuple[float, float, float]:
        """Dipole with the enantiomer sign applied to the flip axis."""
        mu = list(self.mu)
        mu[_AXES.index(self.flip_axis)] *= self.enantiomer_sign
        return tuple(mu)

    def mirrored(self) -> "RotorSpec":
        return replace(self, enantiomer_sign=-self.enantiomer_sign)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "A_MHz": self.A,
            "B_MHz": self.B,
            "C_MHz": self.C,
            "mu_D": list(self.mu),
            "flip_axis": self.flip_axis,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RotorSpec":
        try:
            return cls(
                A=float(d["A_MHz"]),
                B=float(d["B_MHz"]),
                C=float(d["C_MHz"]),
                mu=tuple(float(x) for x in d["mu_D"]),
                flip_axis=d.get("flip_axis", "c"),
                name=d.get("name", ""),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed molecule preset: {exc}") from exc


PRESETS = {
    "carvone": RotorSpec(A=2237.21, B=656.28, C=579.64, mu=(2.0, 3.0, 0.5), flip_axis="c", name="carvone"),
}


def preset(name: str) -> RotorSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown molecule preset {name!r}; known: {sorted(PRESETS)}") from None


def time_unit_seconds(spec: RotorSpec) -> float:
    """Time unit hbar/B in seconds."""
    return 1.0 / (2 * math.pi * spec.B * 1e6)


def rate_per_debye(spec: RotorSpec, field_V_per_cm: float) -> float:
    """Rabi rate per Debye of coupling, in units of 1/t0, for a field amplitude."""
    return field_V_per_cm * DEBYE_VCM_TO_MHZ / spec.B


@dataclass(frozen=True)
class AsymTopState:
    """Asymmetric-top eigenstate |J, tau, M> with its symmetric-top expansion.

    ``coeffs[K + J]`` is the (real) coefficient of |J, K, M>.
    """

    J: int
    tau: int
    M: int
    energy: float
    coeffs: tuple[float, ...] = field(repr=False)

    @property
    def level(self) -> tuple[int, int]:
        return (self.J, self.tau)

    def label(self) -> str:
        return f"|{self.J},{self.tau},{self.M}>"


def _rotor_matrix(spec: RotorSpec, J: int) -> np.ndarray:
    """Rigid-rotor Hamiltonian block for given J in the |J,K> basis (angular MHz)."""
    A, B, C = (2 * math.pi * x for x in (spec.A, spec.B, spec.C))
    Ks = np.arange(-J, J + 1)
    jj = J * (J + 1)
    H = np.diag((B + C) / 2 * (jj - Ks**2) + A * Ks**2).astype(float)
    for i, K in enumerate(Ks[:-2]):
        val = (B - C) / 4 * math.sqrt((jj - K * (K + 1)) * (jj - (K + 1) * (K + 2)))
        H[i, i + 2] = H[i + 2, i] = val
    return H


_LEVEL_CACHE: dict = {}


def level_block(spec: RotorSpec, J: int) -> list[tuple[int, float, np.ndarray]]:
    """Eigen-decomposition of the J block, sorted by energy.

    Returns (tau, energy, coeffs) with tau = -J..J in increasing energy. Each
    coefficient vector is real, normalized, with its largest-magnitude entry
    positive.
    """
    if J < 0 or int(J) != J:
        raise ConfigError(f"J must be a non-negative integer, got {J}")
    key = (spec.A, spec.B, spec.C, int(J))
    if key in _LEVEL_CACHE:
        return _LEVEL_CACHE[key]
    w, v = np.linalg.eigh(_rotor_matrix(spec, J))
    out = []
    for i, tau in enumerate(range(-J, J + 1)):
        c = v[:, i].copy()
        k = np.argmax(np.abs(c) - 1e-9 * np.arange(len(c)))
        if c[k] < 0:
            c = -c
        c[np.abs(c) < 1e-14] = 0.0
        out.append((tau, float(w[i]), c))
    _LEVEL_CACHE[key] = out
    return out


def asym_levels(J: int, spec: RotorSpec) -> list[AsymTopState]:
    """All |J, tau, M> states of one J, tau-major and M ascending."""
    return [
        AsymTopState(J, tau, M, e, tuple(float(x) for x in c))
        for tau, e, c in level_block(spec, J)
        for M in range(-J, J + 1)
    ]


def rotor_matrix(spec: RotorSpec, J: int) -> np.ndarray:
    """Rigid-rotor J block in the symmetric-top basis, K = -J..J."""
    return _rotor_matrix(spec, J)


def level_energy(spec: RotorSpec, J: int, tau: int) -> float:
    for t, e, _ in level_block(spec, J):
        if t == tau:
            return e
    raise ConfigError(f"tau must lie in [-J, J], got J={J}, tau={tau}")


def asym_state(spec: RotorSpec, J: int, tau: int, M: int) -> AsymTopState:
    if abs(M) > J:
        raise ConfigError(f"|M| must not exceed J, got J={J}, M={M}")
    for t, e, c in level_block(spec, J):
        if t == tau:
            return AsymTopState(J, tau, M, e, tuple(float(x) for x in c))
    raise ConfigError(f"tau must lie in [-J, J], got J={J}, tau={tau}")


# Lab-frame dipole components as combinations of D^1_{MK}, per body axis:
# axis -> body component -> [(coefficient, M, K)]; coefficients multiply the
# conj(D^1_{MK}) elements returned by d1_element, with body x=b, y=c, z=a
_S2 = 1 / math.sqrt(2)
_DIPOLE_TABLE = {
    "x": {
        "a": [(_S2, -1, 0), (-_S2, 1, 0)],
        "b": [(0.5, 1, 1), (-0.5, 1, -1), (-0.5, -1, 1), (0.5, -1, -1)],
        "c": [(0.5j, 1, 1), (0.5j, 1, -1), (-0.5j, -1, 1), (-0.5j, -1, -1)],
    },
    "y": {
        "a": [(1j * _S2, -1, 0), (1j * _S2, 1, 0)],
        "b": [(-0.5j, 1, 1), (0.5j, 1, -1), (-0.5j, -1, 1), (0.5j, -1, -1)],
        "c": [(0.5, 1, 1), (0.5, 1, -1), (0.5, -1, 1), (0.5, -1, -1)],
    },
    "z": {
        "a": [(1.0, 0, 0)],
        "b": [(-_S2, 0, 1), (_S2, 0, -1)],
        "c": [(-1j * _S2, 0, 1), (-1j * _S2, 0, -1)],
    },
}


def _unit_dipole_element(axis: str, comp: str, bra: AsymTopState, ket: AsymTopState) -> complex:
    """Matrix element of the lab axis dipole for a unit body-frame component."""
    val = 0j
    for coef, M, K in _DIPOLE_TABLE[axis][comp]:
        if bra.M != ket.M + M:
            continue
        for i, c1 in enumerate(ket.coeffs):
            if c1 == 0.0:
                continue
            K1 = i - ket.J
            K2 = K1 + K
            if abs(K2) > bra.J:
                continue
            c2 = bra.coeffs[K2 + bra.J]
            if c2 == 0.0:
                continue
            val += coef * c1 * c2 * d1_element(SymTopKet(bra.J, K2, bra.M), M, K, SymTopKet(ket.J, K1, ket.M))
    return val


def lab_dipole_element(axis: str, bra: AsymTopState, ket: AsymTopState, spec: RotorSpec) -> complex:
    """<bra| mu_axis |ket> for lab axis x, y or z, in Debye.

    Uses the enantiomer-signed body-frame dipole of ``spec``.
    """
    if axis not in _DIPOLE_TABLE:
        raise ConfigError(f"lab axis must be x, y or z, got {axis!r}")
    mu = spec.signed_mu()
    return sum(m * _unit_dipole_element(axis, comp, bra, ket) for m, comp in zip(mu, _AXES))


@dataclass(frozen=True)
class FieldSpec:
    """A field resonant with the gap between two levels, with a polarization."""

    field_id: str
    lower: tuple[int, int]
    upper: tuple[int, int]
    polarization: str

    def __post_init__(self):
        if self.polarization not in ("x", "y", "z", "sigma+", "sigma-"):
            raise ConfigError(f"unknown polarization {self.polarization!r}")
        object.__setattr__(self, "lower", tuple(int(x) for x in self.lower))
        object.__setattr__(self, "upper", tuple(int(x) for x in self.upper))

    def to_dict(self) -> dict:
        return {
            "field_id": self.field_id,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "polarization": self.polarization,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        try:
            return cls(d["field_id"], tuple(d["lower"]), tuple(d["upper"]), d["polarization"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed field entry: {exc}") from exc


@dataclass
class SubsystemModel:
    """Truncated rotor subsystem with field-free energies and coupling matrices.

    ``H0`` holds the diagonal energies. ``couplings[field_id]`` is the
    Hermitian interaction matrix (Debye) of a unit-amplitude field; its
    skew-Hermitian generator is ``-1j * H``. ``components[field_id]`` keeps
    the per body-axis (a, b, c) parts for unit dipole components.
    """

    spec: RotorSpec
    levels: tuple[tuple[int, int], ...]
    basis: tuple[AsymTopState, ...]
    H0: np.ndarray
    fields: dict[str, FieldSpec]
    couplings: dict[str, np.ndarray]
    frequencies: dict[str, float]
    components: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return len(self.basis)

    @property
    def energies(self) -> np.ndarray:
        return self.H0

    @property
    def enantiomer_sign(self) -> int:
        return self.spec.enantiomer_sign

    def level_indices(self, level: tuple[int, int]) -> list[int]:
        level = tuple(level)
        return [i for i, s in enumerate(self.basis) if s.level == level]

    def index(self, J: int, tau: int, M: int) -> int:
        for i, s in enumerate(self.basis):
            if (s.J, s.tau, s.M) == (J, tau, M):
                return i
        raise KeyError((J, tau, M))

    def generator(self, field_id: str) -> np.ndarray:
        return -1j * self.couplings[field_id]

    def drift(self) -> np.ndarray:
        return -1j * np.diag(self.H0).astype(complex)

    def field_list(self) -> list[FieldSpec]:
        return list(self.fields.values())

    def field_ids(self) -> list[str]:
        return list(self.fields)


def _resonant_pairs(model_levels, energies: dict, omega: float, rtol: float) -> list:
    pairs = []
    for l1, l2 in itertools.combinations(model_levels, 2):
        gap = abs(energies[l1] - energies[l2])
        if abs(gap - omega) <= rtol * max(omega, 1.0):
            pairs.append((l1, l2))
    return pairs


def _clean(m: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    m = m.copy()
    re, im = m.real.copy(), m.imag.copy()
    re[np.abs(re) < atol] = 0.0
    im[np.abs(im) < atol] = 0.0
    return re + 1j * im


def _linear_components(basis, pair_idx, axis):
    """Per body-axis unit dipole matrices of ``axis`` restricted to index pairs."""
    N = len(basis)
    comps = {}
    for comp in _AXES:
        m = np.zeros((N, N), dtype=complex)
        for h, k in pair_idx:
            m[h, k] = _unit_dipole_element(axis, comp, basis[h], basis[k])
            m[k, h] = np.conj(m[h, k])
        comps[comp] = _clean(m)
    return comps


def build_subsystem(
    spec: RotorSpec,
    levels: Sequence[tuple[int, int]],
    fields: Sequence[FieldSpec],
    resonance_rtol: float = RESONANCE_RTOL,
    isolation_warning: bool = True,
) -> SubsystemModel:
    """Assemble the truncated Hamiltonian for the given levels and fields.

    Basis order follows ``levels`` and, within a level, increasing M. Each
    field couples only the states of its level pair; any other in-subsystem
    level pair with the same gap is rejected as ambiguous. A
    :class:`SpectralIsolationWarning` is emitted when a field also matches a
    gap to some level outside the subsystem with J up to max(J) + 1.
    """
    levels = tuple(tuple(int(x) for x in lv) for lv in levels)
    if len(set(levels)) != len(levels):
        raise ConfigError("duplicate level in subsystem")
    if not levels:
        raise ConfigError("empty subsystem")
    energies = {}
    basis = []
    for J, tau in levels:
        if J < 0 or abs(tau) > J:
            raise ConfigError(f"invalid level (J={J}, tau={tau})")
        energies[(J, tau)] = level_energy(spec, J, tau)
        for M in range(-J, J + 1):
            basis.append(asym_state(spec, J, tau, M))
    basis = tuple(basis)
    N = len(basis)
    H0 = np.array([s.energy for s in basis], dtype=float)

    fdict, couplings, freqs, comps_all = {}, {}, {}, {}
    mu = spec.signed_mu()
    for f in fields:
        if f.field_id in fdict:
            raise ConfigError(f"duplicate field id {f.field_id!r}")
        for lv in (f.lower, f.upper):
            if lv not in energies:
                raise ConfigError(f"field {f.field_id!r} references level {lv} outside the subsystem")
        if f.lower == f.upper:
            raise ConfigError(f"field {f.field_id!r} must connect two distinct levels")
        omega = abs(energies[f.upper] - energies[f.lower])
        matches = _resonant_pairs(levels, energies, omega, resonance_rtol)
        if len(matches) > 1:
            raise ConfigError(f"field {f.field_id!r} is resonant with several level gaps: {matches}")
        lo_idx = [i for i, s in enumerate(basis) if s.level == f.lower]
        up_idx = [i for i, s in enumerate(basis) if s.level == f.upper]
        pairs = [(h, k) for h in up_idx for k in lo_idx]
        if f.polarization in ("x", "y", "z"):
            comps = _linear_components(basis, pairs, f.polarization)
        else:
            cx = _linear_components(basis, pairs, "x")
            cy = _linear_components(basis, pairs, "y")
            sign = 1 if f.polarization == "sigma+" else -1
            comps = {c: _circular_from_linear(H0, cx[c], cy[c], omega, sign) for c in _AXES}
        # interaction energy is -mu.E
        comps = {c: -m for c, m in comps.items()}
        H = sum(m_c * comps[c] for m_c, c in zip(mu, _AXES))
        if not np.any(H):
            raise ConfigError(f"field {f.field_id!r} has no dipole-allowed matrix element")
        fdict[f.field_id] = f
        couplings[f.field_id] = H
        freqs[f.field_id] = omega
        comps_all[f.field_id] = np.stack([comps[c] for c in _AXES])
        if isolation_warning:
            _warn_isolation(spec, levels, energies, f, omega, resonance_rtol)
    return SubsystemModel(spec, levels, basis, H0, fdict, couplings, freqs, comps_all)


def _warn_isolation(spec, levels, energies, f, omega, rtol):
    jmax = max(J for J, _ in levels) + 1
    outside = [(J, t) for J in range(jmax + 1) for t in range(-J, J + 1) if (J, t) not in energies]
    hits = []
    for lv in levels:
        for ov in outside:
            gap = abs(level_energy(spec, *ov) - energies[lv])
            if abs(gap - omega) <= rtol * omega:
                hits.append((lv, ov))
    if hits:
        warnings.warn(
            f"field {f.field_id!r} is also resonant with transitions leaving the subsystem: {hits}",
            SpectralIsolationWarning,
            stacklevel=3,
        )


def _circular_from_linear(energies: np.ndarray, Hx: np.ndarray, Hy: np.ndarray, omega: float, sign: int):
    # J(X) = [iH0, X]/omega acts entrywise as i(E_h - E_k)/omega
    gap = np.subtract.outer(energies, energies) / omega
    JiHy = 1j * gap * (1j * Hy)
    skew = 1j * Hx + sign * JiHy
    return _clean(-1j * skew)


def circular_coupling(model: SubsystemModel, Hx: np.ndarray, Hy: np.ndarray, omega: float, sign: int) -> np.ndarray:
    """Hermitian circular coupling built from resonant linear x and y couplings.

    ``sign=+1`` keeps only Delta M = +1 absorption (sigma+), ``sign=-1`` only
    Delta M = -1 (sigma-). The result is resonant by construction.
    """
    if sign not in (1, -1):
        raise ConfigError("sign must be +1 or -1")
    if omega <= 0:
        raise ConfigError("frequency must be positive")
    gaps = np.abs(np.subtract.outer(model.H0, model.H0))
    for name, H in (("x", Hx), ("y", Hy)):
        nz = np.abs(H) > 0
        if np.any(np.abs(gaps[nz] - omega) > RESONANCE_RTOL * omega):
            raise ConfigError(f"{name} coupling is not resonant with omega={omega}")
    return _circular_from_linear(model.H0, Hx, Hy, omega, sign)


def mirror(model: SubsystemModel) -> SubsystemModel:
    """The same subsystem for the opposite enantiomer."""
    return _with_sign(model, -model.spec.enantiomer_sign)


def _with_sign(model: SubsystemModel, sign: int) -> SubsystemModel:
    spec = replace(model.spec, enantiomer_sign=sign)
    mu = spec.signed_mu()
    couplings = {fid: sum(m * comp for m, comp in zip(mu, model.components[fid])) for fid in model.fields}
    return replace(model, spec=spec, couplings=couplings)


def enantiomer_pair(model: SubsystemModel) -> tuple[SubsystemModel, SubsystemModel]:
    """(+) and (-) versions of a model; they differ by the flip-axis dipole sign.

    Couplings are recombined from the stored per-axis parts, so fields that
    do not involve the flipped component come out bitwise identical.
    """
    return _with_sign(model, 1), _with_sign(model, -1)
