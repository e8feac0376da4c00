"""Resonant pulse propagation for both enantiomers in the interaction picture.

Each pulse on field f contributes (kappa(t)/2)(e^{i phi} R_f + e^{-i phi} R_f^dagger)
to the interaction-picture Hamiltonian, with R_f the energy-raising part of
the coupling matrix. Time is in units of t0 = hbar/B, areas in radians per
unit coupling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import constants
from scipy.signal import find_peaks

from .rotor import ConfigError, SubsystemModel

__all__ = [
    "PulseSpec",
    "PulseSequence",
    "EnsembleState",
    "SimulationResult",
    "PropagationError",
    "raising_part",
    "effective_generator",
    "propagate",
    "pulse_unitary",
    "sequence_unitary",
    "selectivity",
    "normalized_selectivity",
    "thermal_ensemble",
    "count_population_maxima",
    "write_population_csv",
    "write_level_csv",
]

ENVELOPES = ("rectangular", "sin2")
NORM_ABORT = 1e-6


class PropagationError(RuntimeError):
    """Norm drift beyond tolerance during propagation."""


@dataclass(frozen=True)
class PulseSpec:
    """One resonant pulse. ``area`` is the time integral of the rate kappa(t)."""

    field_id: str
    t_start: float
    duration: float
    area: float
    envelope: str = "sin2"
    phase: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError(f"pulse on {self.field_id!r} needs a positive duration")
        if self.area < 0:
            raise ConfigError(f"pulse on {self.field_id!r} has negative area")
        if self.envelope not in ENVELOPES:
            raise ConfigError(f"unknown envelope {self.envelope!r}")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    @property
    def peak_rate(self) -> float:
        scale = 2.0 if self.envelope == "sin2" else 1.0
        return scale * self.area / self.duration

    def rate(self, t):
        """Instantaneous rate kappa(t); zero outside the pulse window."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t_start) & (t <= self.t_end)
        if self.envelope == "rectangular":
            shape = np.ones_like(t)
        else:
            shape = np.sin(np.pi * (t - self.t_start) / self.duration) ** 2
        out = np.where(inside, self.peak_rate * shape, 0.0)
        return out if out.ndim else float(out)

    def area_between(self, a: float, b: float) -> float:
        """Integral of the rate over [a, b], clipped to the pulse window."""
        a, b = max(a, self.t_start), min(b, self.t_end)
        if b <= a:
            return 0.0
        if self.envelope == "rectangular":
            return self.peak_rate * (b - a)
        w = 2 * np.pi / self.duration
        prim = lambda t: 0.5 * (t - self.t_start) - np.sin(w * (t - self.t_start)) / (2 * w)
        return float(self.peak_rate * (prim(b) - prim(a)))

    def to_dict(self) -> dict:
        return {
            "field_id": self.field_id,
            "t_start_t0": self.t_start,
            "duration_t0": self.duration,
            "envelope": self.envelope,
            "area_rad": self.area,
            "phase_rad": self.phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSpec":
        try:
            return cls(
                field_id=str(d["field_id"]),
                t_start=float(d["t_start_t0"]),
                duration=float(d["duration_t0"]),
                area=float(d["area_rad"]),
                envelope=d.get("envelope", "sin2"),
                phase=float(d.get("phase_rad", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed pulse entry: {exc}") from exc


@dataclass
class PulseSequence:
    """Ordered pulses (overlaps allowed) plus an optional certificate."""

    pulses: list[PulseSpec] = field(default_factory=list)
    name: str = ""
    certificate: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pulses)

    def __iter__(self):
        return iter(self.pulses)

    @property
    def t_end(self) -> float:
        return max((p.t_end for p in self.pulses), default=0.0)

    def field_ids(self) -> list[str]:
        return [p.field_id for p in self.pulses]

    def breakpoints(self) -> list[float]:
        pts = {0.0}
        for p in self.pulses:
            pts.update((p.t_start, p.t_end))
        return sorted(pts)

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.pulses]

    @classmethod
    def from_list(cls, items: Sequence[dict], name: str = "") -> "PulseSequence":
        if not isinstance(items, (list, tuple)):
            raise ConfigError("pulse list must be a JSON array")
        return cls([PulseSpec.from_dict(d) for d in items], name=name)


@dataclass
class EnsembleState:
    """Incoherent mixture of normalized pure states."""

    weights: np.ndarray
    vectors: np.ndarray  # shape (n_states, N)
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        if len(self.weights) != len(self.vectors) or len(self.weights) == 0:
            raise ConfigError("ensemble needs one weight per state vector")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("ensemble weights must be non-negative and sum to 1")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ConfigError("ensemble state vectors must be normalized")
        if not self.labels:
            self.labels = [str(i) for i in range(len(self.weights))]

    @property
    def N(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def pure(cls, vector, label: str = "0") -> "EnsembleState":
        v = np.asarray(vector, dtype=complex)
        return cls(np.ones(1), v[None, :] / np.linalg.norm(v), [label])

    @classmethod
    def basis_states(cls, N: int, indices: Sequence[int], weights=None, labels=None) -> "EnsembleState":
        idx = list(indices)
        if not idx:
            raise ConfigError("empty initial state list")
        vecs = np.zeros((len(idx), N), dtype=complex)
        for r, i in enumerate(idx):
            if not 0 <= i < N:
                raise ConfigError(f"basis index {i} out of range")
            vecs[r, i] = 1.0
        w = np.full(len(idx), 1.0 / len(idx)) if weights is None else np.asarray(weights, float)
        return cls(w, vecs, labels or [str(i) for i in idx])


def thermal_ensemble(model: SubsystemModel, levels: Sequence[tuple[int, int]], temperature: float) -> EnsembleState:
    """Boltzmann mixture over the M states of ``levels`` (weight exp(-E/kT) per state).

    At zero temperature only the lowest listed level is populated (ties share).
    """
    levels = [tuple(lv) for lv in levels]
    if not levels:
        raise ConfigError("thermal ensemble needs at least one level")
    if temperature < 0:
        raise ConfigError("temperature must be non-negative")
    energies = []
    for lv in levels:
        idx = model.level_indices(lv)
        if not idx:
            raise ConfigError(f"level {lv} not in subsystem")
        energies.append(model.H0[idx[0]])
    e = np.array(energies)
    # energies are angular MHz: h*nu = hbar*E
    if temperature == 0:
        pop = (np.abs(e - e.min()) <= 1e-9 * max(1.0, abs(e.min()))).astype(float)
    else:
        beta = constants.hbar * 1e6 / (constants.k * temperature)
        pop = np.exp(-beta * (e - e.min()))
    pop /= pop.sum()
    idx, w, labels = [], [], []
    for lv, p in zip(levels, pop):
        states = model.level_indices(lv)
        for i in states:
            if p > 0:
                idx.append(i)
                w.append(p)
                labels.append(model.basis[i].label())
    w = np.array(w)
    return EnsembleState.basis_states(model.N, idx, w / w.sum(), labels)


def raising_part(model: SubsystemModel, field_id: str) -> np.ndarray:
    """Entries (h, k) of the coupling with E_h > E_k."""
    if field_id not in model.couplings:
        raise ConfigError(f"unknown field {field_id!r}")
    up = np.subtract.outer(model.H0, model.H0) > 0
    return np.where(up, model.couplings[field_id], 0.0)


def _pulse_hamiltonian(model: SubsystemModel, field_id: str, phase: float) -> np.ndarray:
    R = raising_part(model, field_id)
    X = np.exp(1j * phase) * R
    return 0.5 * (X + X.conj().T)


def effective_generator(model: SubsystemModel, active: Sequence[tuple[PulseSpec, float]]) -> np.ndarray:
    """Skew-Hermitian interaction-picture generator for pulses at given rates."""
    G = np.zeros((model.N, model.N), dtype=complex)
    for pulse, rate in active:
        G += -1j * rate * _pulse_hamiltonian(model, pulse.field_id, pulse.phase)
    return G


def pulse_unitary(model: SubsystemModel, pulse: PulseSpec) -> np.ndarray:
    """Exact propagator of one isolated pulse (the envelope only sets the area)."""
    H = _pulse_hamiltonian(model, pulse.field_id, pulse.phase)
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * pulse.area * w)) @ V.conj().T


def sequence_unitary(model: SubsystemModel, pulses: Sequence[PulseSpec]) -> np.ndarray:
    """Exact propagator of a sequence whose pulses are disjoint or share a window.

    Pulses with identical start, duration and envelope have proportional
    time dependence, so their generators commute in time and combine into
    one exponential. Partial overlaps are rejected.
    """
    groups: dict[tuple, list[PulseSpec]] = {}
    for p in pulses:
        groups.setdefault((p.t_start, p.duration, p.envelope), []).append(p)
    keys = sorted(groups)
    for a, b in zip(keys[:-1], keys[1:]):
        if b[0] < a[0] + a[1] - 1e-12:
            raise ConfigError("partially overlapping pulses need time stepping")
    U = np.eye(model.N, dtype=complex)
    for key in keys:
        H = sum(p.area * _pulse_hamiltonian(model, p.field_id, p.phase) for p in groups[key])
        w, V = np.linalg.eigh(H)
        U = (V * np.exp(-1j * w)) @ V.conj().T @ U
    return U


@dataclass
class SimulationResult:
    """Trajectories for both enantiomers.

    ``populations[sign]`` has shape (n_times, n_initial, N); ``states`` the
    matching amplitudes.
    """

    times: np.ndarray
    states: dict[int, np.ndarray]
    weights: np.ndarray
    initial_labels: list[str]
    models: dict[int, SubsystemModel]
    sequence: PulseSequence

    @property
    def populations(self) -> dict[int, np.ndarray]:
        return {s: np.abs(a) ** 2 for s, a in self.states.items()}

    @property
    def basis(self):
        return self.models[1].basis

    def level_population(self, sign: int, level: tuple[int, int]) -> np.ndarray:
        idx = self.models[sign].level_indices(level)
        if not idx:
            raise ConfigError(f"level {level} not in subsystem")
        pops = np.abs(self.states[sign][:, :, idx]) ** 2
        return np.einsum("tis,i->t", pops, self.weights)

    def state_population(self, sign: int, index: int) -> np.ndarray:
        return np.einsum("ti,i->t", np.abs(self.states[sign][:, :, index]) ** 2, self.weights)

    def final_populations(self, sign: int) -> np.ndarray:
        """Ensemble-averaged populations per basis index at the last time."""
        return self.weights @ (np.abs(self.states[sign][-1]) ** 2)

    def norm_error(self) -> float:
        return max(float(np.abs(np.linalg.norm(a, axis=2) - 1).max()) for a in self.states.values())


def _step_grid(sequence: PulseSequence, dt: float, t_final: float) -> np.ndarray:
    pts = [p for p in sequence.breakpoints() if p <= t_final]
    if t_final not in pts:
        pts.append(t_final)
    pts = sorted(set(pts))
    grid = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        grid.extend(a + (b - a) * np.arange(1, n + 1) / n)
    return np.array(grid)


def max_rate(models: Sequence[SubsystemModel], sequence: PulseSequence) -> float:
    """Largest instantaneous Rabi rate (kappa times coupling magnitude)."""
    best = 0.0
    for p in sequence:
        for m in models:
            if p.field_id not in m.couplings:
                raise ConfigError(f"pulse references unknown field {p.field_id!r}")
            best = max(best, p.peak_rate * float(np.abs(m.couplings[p.field_id]).max()))
    return best


def propagate(
    models: tuple[SubsystemModel, SubsystemModel] | SubsystemModel,
    sequence: PulseSequence,
    initial: EnsembleState,
    dt: float | None = None,
    t_final: float | None = None,
) -> SimulationResult:
    """Exponential stepping with step-averaged rates over a grid aligned with pulse edges.

    ``models`` is the (+, -) pair (a single model is propagated as +). The
    default step is 0.05 divided by the fastest Rabi rate.
    """
    if isinstance(models, SubsystemModel):
        models = (models,)
    signs = [1, -1][: len(models)]
    N = models[0].N
    if initial.N != N:
        raise ConfigError("initial state dimension does not match the subsystem")
    rate = max_rate(models, sequence)
    limit = 0.05 / rate if rate > 1e-12 else np.inf
    if dt is None:
        dt = limit if np.isfinite(limit) else 1.0
    if not dt > 0:
        raise ConfigError("dt must be positive")
    T = sequence.t_end if t_final is None else float(t_final)
    grid = _step_grid(sequence, dt, T)

    pulse_H = {}
    for s, m in zip(signs, models):
        for k, p in enumerate(sequence.pulses):
            pulse_H[s, k] = _pulse_hamiltonian(m, p.field_id, p.phase)

    states = {s: np.empty((len(grid), len(initial.weights), N), dtype=complex) for s in signs}
    cur = {s: initial.vectors.T.copy() for s in signs}
    for s in signs:
        states[s][0] = cur[s].T
    eig_cache = {}
    for n in range(1, len(grid)):
        t0, t1 = grid[n - 1], grid[n]
        h = t1 - t0
        tm = 0.5 * (t0 + t1)
        # step-averaged rates: exact for a single pulse or co-timed pulses of one shape
        active = [(k, p.area_between(t0, t1) / h) for k, p in enumerate(sequence.pulses) if p.t_start <= tm <= p.t_end]
        for s in signs:
            if not active:
                pass
            elif len(active) == 1:
                k, r = active[0]
                if (s, k) not in eig_cache:
                    eig_cache[s, k] = np.linalg.eigh(pulse_H[s, k])
                w, V = eig_cache[s, k]
                cur[s] = V @ (np.exp(-1j * r * h * w)[:, None] * (V.conj().T @ cur[s]))
            else:
                H = sum(r * pulse_H[s, k] for k, r in active)
                w, V = np.linalg.eigh(H)
                cur[s] = V @ (np.exp(-1j * h * w)[:, None] * (V.conj().T @ cur[s]))
            states[s][n] = cur[s].T
    result = SimulationResult(
        times=grid,
        states=states,
        weights=initial.weights.copy(),
        initial_labels=list(initial.labels),
        models=dict(zip(signs, models)),
        sequence=sequence,
    )
    err = result.norm_error()
    if not err <= NORM_ABORT:
        raise PropagationError(f"norm drift {err:.3e} exceeds {NORM_ABORT:g}; reduce dt (was {dt:g})")
    return result


def _time_index(result: SimulationResult, t: float | None) -> int:
    if t is None:
        return len(result.times) - 1
    return int(np.argmin(np.abs(result.times - t)))


def selectivity(result: SimulationResult, level: tuple[int, int], t: float | None = None) -> float:
    """P+(level) - P-(level) at time t (default: end of propagation)."""
    i = _time_index(result, t)
    return float(result.level_population(1, level)[i] - result.level_population(-1, level)[i])


def normalized_selectivity(result: SimulationResult, level: tuple[int, int], t: float | None = None) -> float | None:
    """S / (P+ + P-), or None when the level is essentially empty."""
    i = _time_index(result, t)
    p, m = result.level_population(1, level)[i], result.level_population(-1, level)[i]
    if p + m <= 1e-6:
        return None
    return float((p - m) / (p + m))


def count_population_maxima(series: np.ndarray, prominence: float = 1e-3) -> int:
    """Number of local maxima, endpoints included, of a population trace."""
    x = np.concatenate([[-np.inf], np.asarray(series, float), [-np.inf]])
    peaks, _ = find_peaks(x, prominence=prominence)
    return len(peaks)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _sample_rows(n: int, every: int) -> list[int]:
    rows = list(range(0, n, max(1, every)))
    if rows[-1] != n - 1:
        rows.append(n - 1)
    return rows


def write_population_csv(result: SimulationResult, path, every: int = 1) -> None:
    """Per-trajectory, per-basis-state populations."""
    rows = _sample_rows(len(result.times), every)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_t0", "enantiomer", "init_state", "state_index", "J", "tau", "M", "population"])
        for sign in sorted(result.states, reverse=True):
            pops = np.abs(result.states[sign]) ** 2
            name = "+" if sign > 0 else "-"
            for r in rows:
                t = _fmt(result.times[r])
                for i, label in enumerate(result.initial_labels):
                    for k, st in enumerate(result.basis):
                        w.writerow([t, name, label, k + 1, st.J, st.tau, st.M, _fmt(pops[r, i, k])])


def write_level_csv(result: SimulationResult, path, every: int = 1) -> None:
    """Ensemble-averaged level populations."""
    rows = _sample_rows(len(result.times), every)
    levels = result.models[1].levels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_t0", "enantiomer", "J", "tau", "population"])
        for sign in sorted(result.states, reverse=True):
            name = "+" if sign > 0 else "-"
            traces = {lv: result.level_population(sign, lv) for lv in levels}
            for r in rows:
                for lv in levels:
                    w.writerow([_fmt(result.times[r]), name, lv[0], lv[1], _fmt(traces[lv][r])])
