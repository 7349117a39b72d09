"""Translation-invariant 1D interactions, Gibbs states and region bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from chainfactor.errors import ArgumentError
from chainfactor.qop import (
    HERM_TOL,
    DensityMatrix,
    Operator,
    check_total_dim,
    embed,
    identity,
    op_norm,
    pseudo_inverse,
    reduce_to,
)

TRUNCATION_NORM = 1e-14

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class Term:
    """One translate-generating term: ``block`` acts on sites ``x + offsets``."""

    offsets: tuple[int, ...]
    block: np.ndarray

    @property
    def diameter(self) -> int:
        return max(self.offsets) - min(self.offsets)


@dataclass(frozen=True)
class Interaction:
    """Translation-invariant interaction Phi, stored without the inverse temperature.

    ``decay`` is ``"finite_range"`` or ``"exponential"``; in the latter case
    ``decay_rate`` holds lambda and the term list is already truncated at
    block norm 1e-14.
    """

    local_dim: int
    terms: tuple[Term, ...]
    decay: str = "finite_range"
    decay_rate: float | None = None
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.decay not in ("finite_range", "exponential"):
            raise ArgumentError(f"unknown decay kind {self.decay!r}")
        d = self.local_dim
        for t in self.terms:
            if min(t.offsets) != 0:
                raise ArgumentError("term offsets must start at 0")
            n = d ** len(t.offsets)
            if t.block.shape != (n, n):
                raise ArgumentError(f"block shape {t.block.shape} does not match offsets {t.offsets}")
            if np.abs(t.block - t.block.conj().T).max() > HERM_TOL * max(1.0, np.abs(t.block).max()):
                raise ArgumentError("interaction blocks must be Hermitian")

    @property
    def range(self) -> float:
        if self.decay == "exponential":
            return math.inf
        return max((t.diameter for t in self.terms), default=0)

    @property
    def strength(self) -> float:
        """Sum of block norms over all terms containing a fixed site."""
        return float(sum(len(t.offsets) * op_norm(t.block) for t in self.terms))

    @property
    def is_real(self) -> bool:
        return all(np.isrealobj(t.block) for t in self.terms)

    def to_config(self) -> dict:
        return dict(self.spec)


# --- built-in models --------------------------------------------------------


def _term(offsets, block):
    return Term(tuple(offsets), np.asarray(block))


def tfim(J: float = 1.0, g: float = 1.0) -> Interaction:
    """Transverse-field Ising chain ``-J Z Z - g X``."""
    terms = []
    if J != 0:
        terms.append(_term((0, 1), -J * np.kron(PAULI_Z, PAULI_Z)))
    if g != 0:
        terms.append(_term((0,), -g * PAULI_X))
    return Interaction(2, tuple(terms), spec={"name": "tfim", "params": {"J": J, "g": g}})


def xxz(Jxy: float = 1.0, Jz: float = 1.0, h: float = 0.0) -> Interaction:
    """XXZ chain ``Jxy (XX + YY) + Jz ZZ + h Z`` (real matrices)."""
    xx_yy = np.kron(PAULI_X, PAULI_X) + np.real(np.kron(PAULI_Y, PAULI_Y))
    terms = [_term((0, 1), Jxy * xx_yy + Jz * np.kron(PAULI_Z, PAULI_Z))]
    if h != 0:
        terms.append(_term((0,), h * PAULI_Z))
    return Interaction(2, tuple(terms), spec={"name": "xxz", "params": {"Jxy": Jxy, "Jz": Jz, "h": h}})


def classical_ising(J: float = 1.0, h: float = 0.0) -> Interaction:
    """Diagonal nearest-neighbour Ising chain ``-J Z Z - h Z``."""
    terms = [_term((0, 1), -J * np.kron(PAULI_Z, PAULI_Z))]
    if h != 0:
        terms.append(_term((0,), -h * PAULI_Z))
    return Interaction(2, tuple(terms), spec={"name": "classical_ising", "params": {"J": J, "h": h}})


def random_ti(seed: int, range: int = 1, local_dim: int = 2) -> Interaction:
    """Random translation-invariant interaction with one block per diameter 0..range.

    Blocks are symmetrized complex Gaussian matrices scaled to unit operator norm.
    """
    if range < 0 or local_dim < 2:
        raise ArgumentError("range must be >= 0 and local_dim >= 2")
    rng = np.random.default_rng(seed)
    terms = []
    for diam in np.arange(range + 1).tolist():
        n = local_dim ** (diam + 1)
        g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        h = (g + g.conj().T) / 2
        terms.append(_term(tuple(np.arange(diam + 1)), h / op_norm(h)))
    spec = {"name": "random_ti", "params": {"seed": seed, "range": range, "local_dim": local_dim}}
    return Interaction(local_dim, tuple(terms), spec=spec)


def exp_ising(lam: float = 1.0, truncation: int | None = None, g: float = 1.0) -> Interaction:
    """Ising chain with couplings ``-exp(-lam k) Z_x Z_{x+k}`` plus transverse field ``-g X``.

    Distances stop at ``truncation`` or where the coupling drops below 1e-14.
    """
    if not lam > 0:
        raise ArgumentError(f"decay rate must be positive, got {lam}")
    kmax = int(math.floor(-math.log(TRUNCATION_NORM) / lam))
    if truncation is not None:
        kmax = min(kmax, int(truncation))
    zz = np.kron(PAULI_Z, PAULI_Z)
    terms = [_term((0, k), -math.exp(-lam * k) * zz) for k in range(1, kmax + 1)]
    if g != 0:
        terms.append(_term((0,), -g * PAULI_X))
    spec = {"name": "exp_ising", "params": {"lam": lam, "truncation": truncation, "g": g}}
    return Interaction(2, tuple(terms), decay="exponential", decay_rate=lam, spec=spec)


def product_model(h: float = 1.0, g: float = 0.5) -> Interaction:
    """Non-interacting chain ``-h Z - g X``; its Gibbs states are product states."""
    terms = (_term((0,), -h * PAULI_Z - g * PAULI_X),)
    return Interaction(2, terms, spec={"name": "product", "params": {"h": h, "g": g}})


BUILTIN_MODELS = {
    "tfim": tfim,
    "xxz": xxz,
    "classical_ising": classical_ising,
    "random_ti": random_ti,
    "exp_ising": exp_ising,
    "product": product_model,
}


def model_from_config(cfg: dict) -> Interaction:
    name = cfg.get("name")
    if name not in BUILTIN_MODELS:
        raise ArgumentError(f"unknown model {name!r}; choose from {sorted(BUILTIN_MODELS)}")
    try:
        return BUILTIN_MODELS[name](**cfg.get("params", {}))
    except TypeError as exc:
        raise ArgumentError(f"bad parameters for model {name!r}: {exc}") from None


# --- Hamiltonians and Gibbs states -----------------------------------------


def build_hamiltonian(interaction: Interaction, n: int) -> Operator:
    """Open-boundary Hamiltonian ``H = sum_x sum_terms Phi(x + offsets)`` on ``n`` sites."""
    if n < 1:
        raise ArgumentError("chain length must be >= 1")
    dims = (interaction.local_dim,) * n
    total = check_total_dim(dims)
    dtype = float if interaction.is_real else complex
    h = np.zeros((total, total), dtype=dtype)
    for t in interaction.terms:
        if t.diameter >= n or op_norm(t.block) < TRUNCATION_NORM:
            continue
        block = Operator(t.block, (interaction.local_dim,) * len(t.offsets))
        for x in range(n - t.diameter):
            h += embed(block, dims, [x + o for o in t.offsets]).data
    return Operator((h + h.conj().T) / 2, dims)


@dataclass(frozen=True)
class GibbsInstance:
    interaction: Interaction
    n: int
    beta: float
    hamiltonian: Operator
    state: DensityMatrix
    log_partition_function: float
    energies: np.ndarray

    @property
    def partition_function(self) -> float:
        return math.exp(self.log_partition_function)

    @property
    def probabilities(self) -> np.ndarray:
        """Eigenvalues of the Gibbs state, e^{-beta E_i} / Z."""
        w = -self.beta * (self.energies - self.energies.min())
        p = np.exp(w)
        return p / p.sum()

    def purity(self) -> float:
        p = self.probabilities
        return float(np.sum(p**2))


def gibbs_from_hamiltonian(h: Operator, beta: float):
    """Return ``(state, log Z, energies)`` for ``exp(-beta h) / Z``.

    The spectrum is shifted by its minimum before exponentiating.
    """
    if not (beta > 0 and math.isfinite(beta)):
        raise ArgumentError(f"beta must be positive and finite, got {beta}")
    e, v = np.linalg.eigh(h.data)
    shifted = np.exp(-beta * (e - e.min()))
    z_shift = shifted.sum()
    rho = (v * (shifted / z_shift)) @ v.conj().T
    rho = (rho + rho.conj().T) / 2
    log_z = math.log(z_shift) - beta * e.min()
    return DensityMatrix(rho, h.space, check=False), log_z, e


def gibbs_state(interaction: Interaction, n: int, beta: float) -> GibbsInstance:
    h = build_hamiltonian(interaction, n)
    state, log_z, e = gibbs_from_hamiltonian(h, beta)
    return GibbsInstance(interaction, n, float(beta), h, state, log_z, e)


# --- regions ----------------------------------------------------------------


@dataclass(frozen=True)
class ChainPartition:
    """Consecutive named blocks ``(name, start, length)`` covering ``[0, n)``."""

    n: int
    blocks: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        pos = 0
        names = set()
        for name, start, length in self.blocks:
            if length < 0 or start != pos:
                raise ArgumentError(f"blocks must be consecutive and non-negative: {self.blocks}")
            if name in names:
                raise ArgumentError(f"duplicate block name {name!r}")
            names.add(name)
            pos += length
        if pos != self.n:
            raise ArgumentError(f"blocks cover {pos} sites, chain has {self.n}")

    @classmethod
    def from_sizes(cls, sizes: Sequence[tuple[str, int]]) -> "ChainPartition":
        blocks, pos = [], 0
        for name, length in sizes:
            blocks.append((name, pos, int(length)))
            pos += int(length)
        return cls(pos, tuple(blocks))

    @classmethod
    def tripartite(cls, a: int, b: int, c: int, a_prime: int = 0, c_prime: int = 0) -> "ChainPartition":
        return cls.from_sizes([("A'", a_prime), ("A", a), ("B", b), ("C", c), ("C'", c_prime)])

    @classmethod
    def window(cls, n: int, a: int, b: int, c: int) -> "ChainPartition":
        """A, B, C centred in a chain of ``n`` sites; leftover sites become A' and C'."""
        rest = n - a - b - c
        if rest < 0:
            raise ArgumentError(f"regions of total size {a + b + c} do not fit in {n} sites")
        return cls.tripartite(a, b, c, rest // 2, rest - rest // 2)

    @classmethod
    def uniform_blocks(cls, n: int, l: int, prefix: str = "A") -> "ChainPartition":
        """Blocks of ``l`` sites; the last block absorbs the remainder."""
        if l < 1 or l > n:
            raise ArgumentError(f"block size {l} invalid for {n} sites")
        count = n // l
        sizes = [l] * count
        sizes[-1] += n - l * count
        return cls.from_sizes([(f"{prefix}{i + 1}", s) for i, s in enumerate(sizes)])

    @property
    def names(self) -> list[str]:
        return [b[0] for b in self.blocks]

    def size(self, name: str) -> int:
        return self._block(name)[2]

    def has(self, name: str) -> bool:
        return name in self.names

    def _block(self, name):
        for b in self.blocks:
            if b[0] == name:
                return b
        raise ArgumentError(f"no block named {name!r}")

    def sites(self, names: Iterable[str] | str, contiguous: bool = True) -> list[int]:
        if isinstance(names, str):
            names = [names]
        out = []
        for nm in names:
            _, start, length = self._block(nm)
            out.extend(range(start, start + length))
        out = sorted(out)
        if contiguous and out and out[-1] - out[0] + 1 != len(out):
            raise ArgumentError(f"blocks {list(names)} do not form a contiguous interval")
        return out


def marginal(inst_or_state, partition: ChainPartition, block_names) -> DensityMatrix:
    """Reduced state on a contiguous union of named blocks."""
    rho = inst_or_state.state if isinstance(inst_or_state, GibbsInstance) else inst_or_state
    if len(rho.dims) != partition.n:
        raise ArgumentError(f"state has {len(rho.dims)} sites, partition expects {partition.n}")
    sites = partition.sites(block_names)
    red = reduce_to(rho, sites)
    return DensityMatrix(red.data, red.space, check=False)


# --- factorization diagnostics ---------------------------------------------


def approx_factorization_norm(rho_abc: Operator, rho_ab: Operator, rho_b: Operator, rho_bc: Operator) -> float:
    """``|| rho_ABC rho_BC^-1 rho_B rho_AB^-1 - 1 ||`` with marginals lifted by identities.

    Region sizes are inferred from the number of sites of each argument.
    """
    n = len(rho_abc.dims)
    na = n - len(rho_bc.dims)
    nc = n - len(rho_ab.dims)
    nb = len(rho_b.dims)
    if na < 0 or nc < 0 or na + nb + nc != n:
        raise ArgumentError("marginal shapes are inconsistent with an A|B|C split")
    dims = rho_abc.dims
    if rho_ab.dims != dims[: na + nb] or rho_bc.dims != dims[na:] or rho_b.dims != dims[na : na + nb]:
        raise ArgumentError("marginal local dimensions do not match the tripartite state")
    ab = embed(pseudo_inverse(rho_ab), dims, range(na + nb)).data
    bc = embed(pseudo_inverse(rho_bc), dims, range(na, n)).data
    b = embed(rho_b, dims, range(na, na + nb)).data
    prod = rho_abc.data @ bc @ b @ ab
    return op_norm(prod - np.eye(prod.shape[0]))


def factorization_norm(rho, partition: ChainPartition) -> float:
    """:func:`approx_factorization_norm` for the A, B, C blocks of ``partition``."""
    abc = marginal(rho, partition, ["A", "B", "C"])
    local = ChainPartition.from_sizes([(k, partition.size(k)) for k in ("A", "B", "C")])
    return approx_factorization_norm(
        abc,
        marginal(abc, local, ["A", "B"]),
        marginal(abc, local, ["B"]),
        marginal(abc, local, ["B", "C"]),
    )


@dataclass(frozen=True)
class GibbsNormDiagnostics:
    product_over_joint: float  # ||rho_A rho_B rho_AB^-1||
    joint_over_product: float  # ||rho_AB rho_A^-1 rho_B^-1||
    state_over_middle: float  # ||rho_ABC rho_B^-1||
    middle_condition: float  # ||rho_B^-1|| ||rho_B||


def gibbs_norm_diagnostics(inst_or_state, partition: ChainPartition) -> GibbsNormDiagnostics:
    rho = inst_or_state.state if isinstance(inst_or_state, GibbsInstance) else inst_or_state
    abc = marginal(rho, partition, ["A", "B", "C"])
    na, nb, nc = (partition.size(k) for k in ("A", "B", "C"))
    local = ChainPartition.tripartite(na, nb, nc)
    ab = marginal(abc, local, ["A", "B"])
    a = marginal(abc, local, ["A"])
    b = marginal(abc, local, ["B"])
    dims_ab = ab.dims
    a_l = embed(a, dims_ab, range(na))
    b_l = embed(b, dims_ab, range(na, na + nb))
    ainv = embed(pseudo_inverse(a), dims_ab, range(na))
    binv_ab = embed(pseudo_inverse(b), dims_ab, range(na, na + nb))
    binv_abc = embed(pseudo_inverse(b), abc.dims, range(na, na + nb))
    binv = pseudo_inverse(b)
    return GibbsNormDiagnostics(
        op_norm(a_l.data @ b_l.data @ pseudo_inverse(ab).data),
        op_norm(ab.data @ ainv.data @ binv_ab.data),
        op_norm(abc.data @ binv_abc.data),
        op_norm(binv) * op_norm(b),
    )


# --- decay fits -------------------------------------------------------------

FIT_FLOOR = 1e-12


@dataclass(frozen=True)
class DecayFitReport:
    """Log-linear fit ``log y ~ slope * x + intercept`` over points with ``y > 1e-12``.

    ``second_differences`` are those of ``log y`` on the retained points;
    ``log_concave`` is true when all of them are ``<= tol``.
    """

    x: tuple[float, ...]
    y: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float
    second_differences: tuple[float, ...]
    log_concave: bool
    n_fitted: int

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.y, self.y[1:]))

    def summary(self) -> str:
        return (
            f"slope={self.slope:.6g} intercept={self.intercept:.6g} R2={self.r_squared:.6g} "
            f"points={self.n_fitted} log_concave={self.log_concave}"
        )


def fit_decay(x, y, floor: float = FIT_FLOOR, concavity_tol: float = 1e-9) -> DecayFitReport:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ArgumentError("x and y must have equal length")
    keep = y > floor
    xs, ly = x[keep], np.log(y[keep])
    nan = float("nan")
    if xs.size >= 2:
        slope, intercept = np.polyfit(xs, ly, 1)
        resid = ly - (slope * xs + intercept)
        ss_tot = float(np.sum((ly - ly.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    else:
        slope = intercept = r2 = nan
    d2 = np.diff(ly, 2) if ly.size >= 3 else np.array([])
    concave = bool(np.all(d2 <= concavity_tol))
    return DecayFitReport(
        tuple(x.tolist()),
        tuple(y.tolist()),
        float(slope),
        float(intercept),
        float(r2),
        tuple(d2.tolist()),
        concave,
        int(xs.size),
    )
