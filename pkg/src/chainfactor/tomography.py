"""Simulated local tomography, learned MPOs and purity estimation.

Two estimation schemes are available. ``delta_ball`` is deterministic: the
true marginal is mixed with the maximally mixed state so that the 1-norm
error equals the requested ``delta``. ``pauli_sampling`` simulates local
random Pauli-basis measurements on qubits and reconstructs the marginal by
linear inversion.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from chainfactor.errors import ArgumentError, ResourceError
from chainfactor.qop import DensityMatrix, Operator, maximally_mixed, partial_trace, trace_distance
from chainfactor.recovery import (
    MpoState,
    block_pairs,
    kernels_from_pairs,
    mpo_export,
    sequential_reconstruct,
)
from chainfactor.spinchain import ChainPartition, GibbsInstance

MAX_PAULI_SITES = 8
INVERTIBILITY_FLOOR = 1e-12

# rows map a single-qubit outcome in basis X, Y, Z to the computational basis
_H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
_HY = np.array([[1, -1j], [1, 1j]]) / np.sqrt(2)
_ROT = np.stack([_H, _HY, np.eye(2)])
_PAULIS = np.stack(
    [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1.0, -1.0])]
)
# per-site maps from (basis, outcome) counts to Pauli numerators/denominators
_NUM = np.zeros((4, 3, 2))
_DEN = np.zeros((4, 3, 2))
_NUM[0] = 1.0
_DEN[0] = 1.0
for _b in range(3):
    _NUM[_b + 1, _b] = [1.0, -1.0]
    _DEN[_b + 1, _b] = [1.0, 1.0]
_BASIS_LETTERS = "XYZ"


@dataclass(frozen=True)
class TomographyConfig:
    """``delta`` may be 0 for ``delta_ball`` (the estimate is then the truth)."""

    scheme: str = "delta_ball"
    samples_per_marginal: int = 10_000
    delta: float = 1e-3
    confidence: float = 0.05
    seed: int = 0
    eps_reg: float = 0.0
    shared_marginal: bool = False

    def __post_init__(self):
        if self.scheme not in ("delta_ball", "pauli_sampling"):
            raise ArgumentError(f"unknown tomography scheme {self.scheme!r}")
        if not self.delta >= 0:
            raise ArgumentError("delta must be non-negative")
        if not 0 < self.confidence < 1:
            raise ArgumentError("confidence must lie in (0, 1)")
        if self.samples_per_marginal < 1:
            raise ArgumentError("samples_per_marginal must be >= 1")

    def samples_for(self, n_marginals: int) -> int:
        """Per-marginal budget scaled for a union bound over ``n_marginals``."""
        c = self.confidence
        scale = math.log(max(n_marginals, 1) / c) / math.log(1 / c)
        return max(1, int(math.ceil(self.samples_per_marginal * scale)))


@dataclass(frozen=True)
class MarginalEstimate:
    estimate: DensityMatrix
    true_error_1norm: float | None
    samples_used: int
    records: tuple = field(default=(), repr=False)


def _delta_ball(rho: Operator, delta: float) -> np.ndarray:
    if delta == 0:
        return rho.data
    pi = maximally_mixed(rho.space).data
    dist = trace_distance(rho, pi)
    if dist == 0:
        return rho.data
    t = min(1.0, delta / dist)
    return (1 - t) * rho.data + t * pi


def born_table(rho: Operator) -> np.ndarray:
    """Outcome probabilities for every local Pauli basis, shape ``(3, 2) * k``.

    Axis pairs are (basis, outcome) per site; built one site at a time so the
    intermediate never exceeds ``6^k`` entries per row index pair.
    """
    k = len(rho.dims)
    t = rho.data.reshape((2,) * (2 * k)).astype(complex)
    # move to interleaved (i_s, j_s) order, then rotate site by site
    t = t.transpose([a for s in range(k) for a in (s, k + s)])
    for s in range(k):
        # contract (i, j) of site s into (basis, outcome)
        t = np.moveaxis(t, (2 * s, 2 * s + 1), (0, 1))
        rest = t.shape[2:]
        m = t.reshape(2, 2, -1)
        out = np.einsum("boi,ijr,boj->bor", _ROT, m, _ROT.conj())
        t = np.moveaxis(out.reshape((3, 2) + rest), (0, 1), (2 * s, 2 * s + 1))
    p = t.real
    return np.clip(p, 0.0, None)


def _transform(counts: np.ndarray, site_map: np.ndarray) -> np.ndarray:
    k = counts.ndim // 2
    t = counts
    for s in range(k):
        t = np.tensordot(site_map, t, axes=([1, 2], [s, s + 1]))
        t = np.moveaxis(t, 0, s)
    return t


def pauli_linear_inversion(counts: np.ndarray) -> np.ndarray:
    """Linear-inversion estimate from a ``(3, 2) * k`` count tensor.

    Each Pauli string is estimated from the samples whose bases agree with it
    on its support.
    """
    k = counts.ndim // 2
    num = _transform(counts, _NUM)
    den = _transform(counts, _DEN)
    expect = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    t = expect.astype(complex)
    for s in range(k):
        t = np.tensordot(t, _PAULIS, axes=([0], [0]))  # appends (i_s, j_s)
    t = t / 2**k
    order = [2 * s for s in range(k)] + [2 * s + 1 for s in range(k)]
    return t.transpose(order).reshape(2**k, 2**k)


def project_to_state(m: np.ndarray, floor: float = INVERTIBILITY_FLOOR) -> np.ndarray:
    """Clip negative eigenvalues, renormalize, then mix in ``floor`` of the maximally mixed state."""
    m = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    out = (v * w) @ v.conj().T
    n = m.shape[0]
    return (1 - floor) * out + floor * np.eye(n) / n


def _pauli_counts(rho: Operator, samples: int, rng: np.random.Generator) -> np.ndarray:
    k = len(rho.dims)
    probs = born_table(rho)
    # (basis multi-index, outcome multi-index) layout
    perm = [2 * s for s in range(k)] + [2 * s + 1 for s in range(k)]
    p = probs.transpose(perm).reshape(3**k, 2**k)
    p = p / p.sum(axis=1, keepdims=True)
    per_basis = rng.multinomial(samples, np.full(3**k, 1.0 / 3**k))
    counts = rng.multinomial(per_basis, p)
    counts = counts.reshape((3,) * k + (2,) * k)
    inv = np.argsort(perm)
    return counts.transpose(inv)


def counts_to_records(counts: np.ndarray, block_index: int) -> list[tuple[int, str, str, int]]:
    k = counts.ndim // 2
    perm = [2 * s for s in range(k)] + [2 * s + 1 for s in range(k)]
    c = counts.transpose(perm)
    out = []
    for idx in zip(*np.nonzero(c)):
        basis = "".join(_BASIS_LETTERS[b] for b in idx[:k])
        outcome = "".join(str(o) for o in idx[k:])
        out.append((block_index, basis, outcome, int(c[idx])))
    return out


def records_to_csv(records: Sequence[tuple[int, str, str, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block_index", "basis_string", "outcome_string", "count"])
    w.writerows(records)
    return buf.getvalue()


def simulate_marginal_estimate(
    true_marginal: Operator,
    config: TomographyConfig,
    block_index: int = 0,
    n_marginals: int = 1,
    keep_records: bool = False,
) -> MarginalEstimate:
    """Estimate of ``true_marginal`` under the configured scheme.

    Random streams are derived from ``(config.seed, block_index)``.
    """
    if config.scheme == "delta_ball":
        dm = DensityMatrix(_delta_ball(true_marginal, config.delta), true_marginal.space, check=False)
        return MarginalEstimate(dm, trace_distance(dm, true_marginal), 0)
    dims = true_marginal.dims
    if any(d != 2 for d in dims):
        raise ArgumentError("pauli_sampling supports qubits only")
    if len(dims) > MAX_PAULI_SITES:
        raise ResourceError(f"pauli_sampling is limited to {MAX_PAULI_SITES} qubits, got {len(dims)}")
    samples = config.samples_for(n_marginals)
    rng = np.random.default_rng([config.seed, block_index])
    counts = _pauli_counts(true_marginal, samples, rng)
    est = project_to_state(pauli_linear_inversion(counts))
    dm = DensityMatrix(est, dims, check=False)
    records = tuple(counts_to_records(counts, block_index)) if keep_records else ()
    return MarginalEstimate(dm, trace_distance(dm, true_marginal), samples, records)


def estimate_pairs(pairs: Sequence[Operator], config: TomographyConfig) -> list[MarginalEstimate]:
    """Estimate each pair marginal; with ``shared_marginal`` one estimate serves all pairs of equal shape.

    The shared estimate is taken from the central pair; pairs of another
    shape (the remainder block) are estimated separately.
    """
    n = len(pairs)
    if not config.shared_marginal:
        return [simulate_marginal_estimate(p, config, k, n) for k, p in enumerate(pairs)]
    mid = n // 2
    shared = simulate_marginal_estimate(pairs[mid], config, mid, 1)
    out = []
    for k, p in enumerate(pairs):
        if p.dims == pairs[mid].dims:
            out.append(MarginalEstimate(shared.estimate, trace_distance(shared.estimate, p), 0 if k != mid else shared.samples_used))
        else:
            out.append(simulate_marginal_estimate(p, config, k, 1))
    return out


@dataclass(frozen=True)
class LearnResult:
    mpo: MpoState | None
    reconstructed: DensityMatrix
    trace_distance_to_truth: float
    estimates: tuple[MarginalEstimate, ...]


def learn_mpo(inst: GibbsInstance, block_size: int, config: TomographyConfig, export_mpo: bool = True) -> LearnResult:
    """Learned reconstruction from estimated pair marginals."""
    rho = inst.state if isinstance(inst, GibbsInstance) else inst
    n = len(rho.dims)
    part = ChainPartition.uniform_blocks(n, block_size)
    sizes = [part.size(nm) for nm in part.names]
    if len(sizes) < 2:
        raise ArgumentError("block size leaves fewer than two blocks")
    ests = estimate_pairs(block_pairs(rho, part), config)
    kernels, rho_1 = kernels_from_pairs([e.estimate for e in ests], sizes, config.eps_reg, check=False)
    rec = sequential_reconstruct(kernels, rho_1)
    mpo = mpo_export(kernels, rho_1) if export_mpo else None
    return LearnResult(mpo, rec, trace_distance(rec, rho), tuple(ests))


# --- purity ------------------------------------------------------------------


def _purity(m) -> float:
    a = m.data if isinstance(m, Operator) else np.asarray(m)
    return float(np.vdot(a, a).real)


def purity_p2(pairs: Sequence[Operator], block_sites: Sequence[int]) -> tuple[float, list[float]]:
    """``prod_j Tr[rho_{j:j+1}^2] / prod_{j=2}^{N-1} Tr[rho_j^2]`` and the factors used.

    Interior single-block marginals are reductions ``rho_{j} = tr_{j-1} rho_{j-1:j}``.
    The second return value lists pair purities followed by interior purities.
    """
    if len(block_sites) < 2 or len(pairs) != len(block_sites) - 1:
        raise ArgumentError("need at least two blocks and one pair marginal per adjacent pair")
    pair_p = [_purity(p) for p in pairs]
    single_p = [_purity(partial_trace(p, range(block_sites[k]))) for k, p in enumerate(pairs[:-1])]
    value = float(np.prod(pair_p) / np.prod(single_p)) if single_p else pair_p[0]
    return value, pair_p + single_p


@dataclass(frozen=True)
class PurityReport:
    p2_estimate: float
    true_purity: float | None
    multiplicative_error: float | None
    block_purities: tuple[float, ...]
    block_size: int
    n_blocks: int


def purity_block_size(n: int, eps: float) -> int:
    """Smallest ``l`` with ``l >= ln(N(l)/eps)``, ``N(l) = n // l`` blocks."""
    for l in range(1, n + 1):
        if l >= math.log(max(n // l, 1) / eps):
            return l
    return n


def estimate_purity(inst: GibbsInstance, block_size: int, config: TomographyConfig) -> PurityReport:
    rho = inst.state if isinstance(inst, GibbsInstance) else inst
    n = len(rho.dims)
    part = ChainPartition.uniform_blocks(n, block_size)
    sizes = [part.size(nm) for nm in part.names]
    if len(sizes) < 2:
        raise ArgumentError("block size leaves fewer than two blocks")
    ests = estimate_pairs(block_pairs(rho, part), config)
    p2, factors = purity_p2([e.estimate for e in ests], sizes)
    true = inst.purity() if isinstance(inst, GibbsInstance) else _purity(rho)
    return PurityReport(p2, true, abs(p2 / true - 1), tuple(factors), block_size, len(sizes))
