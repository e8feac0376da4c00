"""Numerical Lie-closure engine and controllability / enantioselectivity checks.

Skew-Hermitian matrices are handled through an isometric real vectorization
restricted to a block-diagonal pattern, so that composite (two-enantiomer)
systems and reachable-subspace restrictions share one code path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .rotor import SubsystemModel

__all__ = [
    "Generator",
    "LieBasis",
    "VerdictReport",
    "commutator",
    "generalized_pauli",
    "lie_closure",
    "model_generators",
    "check_controllable",
    "build_composite",
    "check_enantioselective",
    "reachable_partition",
    "check_simultaneous_enantioselective",
    "check_reachable_controllable",
]

SANDWICH_TOLS = (1e-6, 1e-10)


@dataclass(frozen=True)
class Generator:
    """Skew-Hermitian matrix with a label."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("generator must be a square matrix")
        scale = max(1.0, np.abs(m).max(initial=0.0))
        if np.abs(m + m.conj().T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError(f"generator {self.label!r} is not skew-Hermitian")
        object.__setattr__(self, "matrix", m)


def commutator(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return X @ Y - Y @ X


def generalized_pauli(kind: str, j: int, k: int, N: int) -> np.ndarray:
    """Generalized Pauli generators of su(N) (1-based indices, j < k).

    G_{jk} = e_jk - e_kj, F_{jk} = i e_jk + i e_kj, D_{jk} = i e_jj - i e_kk.
    """
    if not 1 <= j < k <= N:
        raise ValueError(f"need 1 <= j < k <= N, got j={j}, k={k}, N={N}")
    m = np.zeros((N, N), dtype=complex)
    j0, k0 = j - 1, k - 1
    if kind == "G":
        m[j0, k0], m[k0, j0] = 1.0, -1.0
    elif kind == "F":
        m[j0, k0] = m[k0, j0] = 1j
    elif kind == "D":
        m[j0, j0], m[k0, k0] = 1j, -1j
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return m


class _BlockSpace:
    """Real coordinates for skew-Hermitian matrices supported on diagonal blocks.

    Per block of size n: n diagonal (imaginary parts) plus n(n-1) off-diagonal
    coordinates scaled by sqrt(2), so the Euclidean inner product equals
    Re tr(X^dagger Y). The per-block trace directions are projected out.
    """

    def __init__(self, size: int, blocks: Sequence[Sequence[int]]):
        self.size = size
        self.blocks = [np.asarray(b, dtype=int) for b in blocks]
        rows, cols, kinds = [], [], []
        trace_rows = []
        pos = 0
        for b in self.blocks:
            n = len(b)
            idx = []
            for a in range(n):
                rows.append(b[a])
                cols.append(b[a])
                kinds.append(0)
                idx.append(pos)
                pos += 1
            trace_rows.append(idx)
            for a in range(n):
                for c in range(a + 1, n):
                    rows += [b[a], b[a]]
                    cols += [b[c], b[c]]
                    kinds += [1, 2]
                    pos += 2
        self.rows = np.array(rows, dtype=int)
        self.cols = np.array(cols, dtype=int)
        self.kinds = np.array(kinds, dtype=int)
        self.dim_coords = pos
        self.trace_vecs = []
        for idx in trace_rows:
            v = np.zeros(pos)
            v[idx] = 1.0 / np.sqrt(len(idx))
            self.trace_vecs.append(v)
        self.ambient_dim = sum(len(b) ** 2 - 1 for b in self.blocks)
        self._diag = self.kinds == 0
        self._re = self.kinds == 1
        self._im = self.kinds == 2
        mask = np.zeros((size, size), dtype=bool)
        for b in self.blocks:
            mask[np.ix_(b, b)] = True
        self.support = mask

    def to_vec(self, X: np.ndarray) -> np.ndarray:
        vals = X[self.rows, self.cols]
        v = np.empty(self.dim_coords)
        s2 = np.sqrt(2.0)
        v[self._diag] = vals[self._diag].imag
        v[self._re] = s2 * vals[self._re].real
        v[self._im] = s2 * vals[self._im].imag
        for t in self.trace_vecs:
            v -= (t @ v) * t
        return v

    def from_vec(self, v: np.ndarray) -> np.ndarray:
        X = np.zeros((self.size, self.size), dtype=complex)
        s2 = np.sqrt(2.0)
        d = self._diag
        X[self.rows[d], self.cols[d]] = 1j * v[d]
        re = v[self._re] / s2
        im = v[self._im] / s2
        r, c = self.rows[self._re], self.cols[self._re]
        X[r, c] = re + 1j * im
        X[c, r] = -re + 1j * im
        return X

    def leakage(self, X: np.ndarray) -> float:
        return float(np.abs(X[~self.support]).max(initial=0.0))


@dataclass
class LieBasis:
    """Orthonormal (Frobenius) basis of a Lie closure."""

    elements: list[np.ndarray]
    dim: int
    ambient_dim: int
    tol: float
    saturated: bool
    strategy: str = "generators"
    depth: int = 0

    @property
    def full(self) -> bool:
        return self.dim == self.ambient_dim


def _as_matrix(g) -> np.ndarray:
    if isinstance(g, Generator):
        return g.matrix
    m = np.asarray(g, dtype=complex)
    Generator(m)  # validates skew-Hermiticity
    return m


def lie_closure(
    generators: Iterable,
    tol: float = 1e-8,
    max_dim: int | None = None,
    blocks: Sequence[Sequence[int]] | None = None,
    strategy: str = "generators",
) -> LieBasis:
    """Orthonormal basis of the real Lie algebra generated by skew-Hermitian matrices.

    Seeds are normalized; a bracket of unit-norm elements is accepted when
    its residual after two passes of Gram-Schmidt exceeds ``tol``. With
    ``strategy="generators"`` every accepted element is bracketed with the
    seed generators only (left-normed brackets span the algebra);
    ``strategy="pairs"`` brackets all pairs of basis elements.

    ``blocks`` restricts the ambient space to block-diagonal matrices that
    are traceless on each block. The search stops early once the basis fills
    that space.
    """
    mats = [_as_matrix(g) for g in generators]
    if not mats:
        raise ValueError("need at least one generator")
    size = mats[0].shape[0]
    if any(m.shape != (size, size) for m in mats):
        raise ValueError("generators must share one shape")
    if strategy not in ("generators", "pairs"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if blocks is None:
        blocks = [list(range(size))]
    space = _BlockSpace(size, blocks)
    for m in mats:
        if space.leakage(m) > 1e-12 * max(1.0, np.abs(m).max()):
            raise ValueError("generator has entries outside the block structure")
    bound = space.ambient_dim if max_dim is None else min(max_dim, space.ambient_dim)

    Q = np.zeros((space.dim_coords, space.ambient_dim))
    basis_vecs: list[np.ndarray] = []
    depth_of: list[int] = []

    def try_add(v: np.ndarray, depth: int) -> bool:
        # candidates are brackets of unit-norm elements, so the residual is
        # compared with tol directly; normalizing first would promote round-off
        k = len(basis_vecs)
        if k >= space.ambient_dim:
            return False
        for _ in range(2):
            if k:
                v = v - Q[:, :k] @ (Q[:, :k].T @ v)
        r = np.linalg.norm(v)
        if r <= tol:
            return False
        v = v / r
        Q[:, k] = v
        basis_vecs.append(v)
        depth_of.append(depth)
        return True

    seeds = []
    for m in mats:
        v = space.to_vec(m)
        n = np.linalg.norm(v)
        if n > 1e-12 * max(1.0, np.abs(m).max()):
            seeds.append(space.from_vec(v / n))
            try_add(v / n, 1)

    head = 0
    saturated = True
    while head < len(basis_vecs):
        if len(basis_vecs) >= space.ambient_dim:
            break
        if len(basis_vecs) >= bound:
            saturated = False
            break
        X = space.from_vec(basis_vecs[head])
        d = depth_of[head]
        partners = seeds if strategy == "generators" else [space.from_vec(b) for b in basis_vecs[: head + 1]]
        for Y in partners:
            if try_add(space.to_vec(commutator(Y, X)), d + 1):
                if len(basis_vecs) >= bound:
                    break
        head += 1

    if not saturated:
        warnings.warn(
            f"Lie closure stopped at max_dim={bound} before saturating", RuntimeWarning, stacklevel=2
        )
    elements = [space.from_vec(b) for b in basis_vecs]
    return LieBasis(
        elements=elements,
        dim=len(elements),
        ambient_dim=space.ambient_dim,
        tol=tol,
        saturated=saturated,
        strategy=strategy,
        depth=max(depth_of, default=0),
    )


@dataclass
class VerdictReport:
    system: str
    N: int
    fields: list[str]
    dim_found: int
    dim_required: int
    verdict: str
    tol: float
    saturated: bool
    sandwich: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "N": self.N,
            "fields": list(self.fields),
            "dim_found": self.dim_found,
            "dim_required": self.dim_required,
            "verdict": self.verdict,
            "tol": self.tol,
            "saturated": self.saturated,
            "sandwich": {str(k): v for k, v in self.sandwich.items()},
            "details": self.details,
        }


def model_generators(model: SubsystemModel, field_ids: Sequence[str] | None = None) -> list[Generator]:
    """Drift plus field generators of a subsystem, as skew-Hermitian matrices."""
    ids = model.field_ids() if field_ids is None else list(field_ids)
    out = [Generator(model.drift(), "H0")]
    for fid in ids:
        if fid not in model.couplings:
            raise KeyError(f"unknown field {fid!r}")
        out.append(Generator(model.generator(fid), fid))
    return out


def _sandwiched(gens, tol, blocks, max_dim, strategy):
    main = lie_closure(gens, tol=tol, blocks=blocks, max_dim=max_dim, strategy=strategy)
    dims = {tol: main.dim}
    for t in SANDWICH_TOLS:
        if t != tol:
            dims[t] = lie_closure(gens, tol=t, blocks=blocks, max_dim=max_dim, strategy=strategy).dim
    return main, dims


def _verdict(main: LieBasis, dims: dict, required: int, yes: str, no: str) -> str:
    if not main.saturated or len(set(dims.values())) > 1:
        return "inconclusive"
    return yes if main.dim == required else no


def _system_name(model: SubsystemModel) -> str:
    name = model.spec.name or "rotor"
    levels = "/".join(f"{J}{tau:+d}" for J, tau in model.levels)
    return f"{name}[{levels}]"


def check_controllable(
    model: SubsystemModel,
    field_ids: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_dim: int | None = None,
    strategy: str = "generators",
) -> VerdictReport:
    """Closure of {iH0, iH_fields} compared with dim su(N) = N^2 - 1."""
    gens = model_generators(model, field_ids)
    main, dims = _sandwiched(gens, tol, None, max_dim, strategy)
    req = model.N**2 - 1
    return VerdictReport(
        system=_system_name(model),
        N=model.N,
        fields=[g.label for g in gens[1:]],
        dim_found=main.dim,
        dim_required=req,
        verdict=_verdict(main, dims, req, "controllable", "not_controllable"),
        tol=tol,
        saturated=main.saturated,
        sandwich=dims,
    )


def build_composite(plus: SubsystemModel, minus: SubsystemModel, field_ids: Sequence[str] | None = None) -> list[Generator]:
    """Block-diagonal generators diag(X+, X-) for drift and every field."""
    if plus.N != minus.N or plus.levels != minus.levels:
        raise ValueError("enantiomer models must share the same subsystem")
    ids = plus.field_ids() if field_ids is None else list(field_ids)
    N = plus.N
    out = []
    for label, a, b in [("H0", plus.drift(), minus.drift())] + [
        (f, plus.generator(f), minus.generator(f)) for f in ids
    ]:
        m = np.zeros((2 * N, 2 * N), dtype=complex)
        m[:N, :N] = a
        m[N:, N:] = b
        out.append(Generator(m, label))
    return out


def check_enantioselective(
    plus: SubsystemModel,
    minus: SubsystemModel,
    field_ids: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_dim: int | None = None,
    strategy: str = "generators",
) -> VerdictReport:
    """Closure of the composite generators compared with 2(N^2 - 1)."""
    gens = build_composite(plus, minus, field_ids)
    N = plus.N
    blocks = [list(range(N)), list(range(N, 2 * N))]
    main, dims = _sandwiched(gens, tol, blocks, max_dim, strategy)
    req = 2 * (N**2 - 1)
    return VerdictReport(
        system=_system_name(plus) + " composite",
        N=N,
        fields=[g.label for g in gens[1:]],
        dim_found=main.dim,
        dim_required=req,
        verdict=_verdict(main, dims, req, "enantioselective", "not_enantioselective"),
        tol=tol,
        saturated=main.saturated,
        sandwich=dims,
    )


def reachable_partition(model: SubsystemModel, field_ids: Sequence[str] | None = None, atol: float = 1e-12) -> list[list[int]]:
    """Connected components of the coupling graph, each sorted, ordered by smallest index."""
    ids = model.field_ids() if field_ids is None else list(field_ids)
    adj = np.zeros((model.N, model.N), dtype=bool)
    for fid in ids:
        adj |= np.abs(model.couplings[fid]) > atol
    n, labels = connected_components(csr_matrix(adj), directed=False)
    comps = [sorted(np.flatnonzero(labels == c).tolist()) for c in range(n)]
    return sorted(comps, key=lambda c: c[0])


def check_simultaneous_enantioselective(
    plus: SubsystemModel,
    minus: SubsystemModel,
    initial_indices: Sequence[int],
    field_ids: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_dim: int | None = None,
    strategy: str = "generators",
) -> VerdictReport:
    """Enantioselectivity restricted to the components reached from ``initial_indices``.

    Isolated components cannot exchange population, so only a relative
    phase per component is physically irrelevant; each component is
    treated as traceless. The target is 2 * sum(n_c^2 - 1) over the active
    components.
    """
    comps_p, active = _active_components(plus, initial_indices, field_ids)
    if comps_p != reachable_partition(minus, field_ids):
        raise ValueError("enantiomers have different coupling graphs")
    union = sorted(i for c in active for i in c)
    pos = {g: i for i, g in enumerate(union)}
    n = len(union)
    gens_full = build_composite(plus, minus, field_ids)
    sel = union + [plus.N + i for i in union]
    gens = [Generator(g.matrix[np.ix_(sel, sel)], g.label) for g in gens_full]
    blocks = [[pos[i] for i in c] for c in active] + [[n + pos[i] for i in c] for c in active]
    main, dims = _sandwiched(gens, tol, blocks, max_dim, strategy)
    req = 2 * sum(len(c) ** 2 - 1 for c in active)
    return VerdictReport(
        system=_system_name(plus) + " composite (reachable)",
        N=plus.N,
        fields=[g.label for g in gens[1:]],
        dim_found=main.dim,
        dim_required=req,
        verdict=_verdict(main, dims, req, "enantioselective", "not_enantioselective"),
        tol=tol,
        saturated=main.saturated,
        sandwich=dims,
        details={"components": active, "all_components": comps_p},
    )


def _active_components(model, initial_indices, field_ids):
    comps = reachable_partition(model, field_ids)
    init = set(int(i) for i in initial_indices)
    if not init or max(init) >= model.N or min(init) < 0:
        raise ValueError("initial indices out of range")
    return comps, [c for c in comps if init & set(c)]


def check_reachable_controllable(
    model: SubsystemModel,
    initial_indices: Sequence[int],
    field_ids: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_dim: int | None = None,
    strategy: str = "generators",
) -> VerdictReport:
    """Single-enantiomer controllability on the components reached from ``initial_indices``.

    Target is sum(n_c^2 - 1) over the active components.
    """
    comps, active = _active_components(model, initial_indices, field_ids)
    union = sorted(i for c in active for i in c)
    pos = {g: i for i, g in enumerate(union)}
    gens = [Generator(g.matrix[np.ix_(union, union)], g.label) for g in model_generators(model, field_ids)]
    blocks = [[pos[i] for i in c] for c in active]
    main, dims = _sandwiched(gens, tol, blocks, max_dim, strategy)
    req = sum(len(c) ** 2 - 1 for c in active)
    return VerdictReport(
        system=_system_name(model) + " (reachable)",
        N=model.N,
        fields=[g.label for g in gens[1:]],
        dim_found=main.dim,
        dim_required=req,
        verdict=_verdict(main, dims, req, "controllable", "not_controllable"),
        tol=tol,
        saturated=main.saturated,
        sandwich=dims,
        details={"components": active, "all_components": comps},
    )
