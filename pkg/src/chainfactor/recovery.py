"""Recovery maps, data-processing bounds for the BS entropy, and MPO export.

Block conventions: a chain split into blocks ``A1 .. AN`` (a
:class:`~chainfactor.spinchain.ChainPartition` from ``uniform_blocks``) is
reconstructed by kernels ``R_1 .. R_{N-1}``, where ``R_i`` maps operators on
block ``i`` to operators on blocks ``i, i+1``. Python lists are 0-based, so
``kernels[k]`` is ``R_{k+1}``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from chainfactor import divergences as dv
from chainfactor.errors import ArgumentError, ContractViolation, ResourceError
from chainfactor.qop import (
    DensityMatrix,
    Operator,
    _as_space,
    as_array,
    check_total_dim,
    embed,
    kernel_contained,
    maximally_mixed,
    op_norm,
    partial_trace,
    pseudo_inv_sqrt,
    pseudo_inverse,
    pseudo_sqrt,
    schatten_norm,
    spectral,
    support_projector,
    trace_distance,
    trace_norm,
)
from chainfactor.spinchain import ChainPartition, marginal

PI8_4 = (math.pi / 8) ** 4
MPO_CUTOFF = 1e-12
CONSISTENCY_TOL = 1e-9


# --- conditional expectations and channels ----------------------------------


@dataclass(frozen=True)
class ConditionalExpectation:
    """Either ``pi_T (x) tr_T`` for a set of sites ``T`` or a pinching ``sum_k P_k X P_k``.

    Build with :meth:`trace_out` or :meth:`pinching`.
    """

    dims: tuple[int, ...]
    kind: str
    traced: tuple[int, ...] = ()
    projectors: tuple[np.ndarray, ...] = field(default=(), compare=False)

    @classmethod
    def trace_out(cls, dims, sites: Sequence[int]) -> "ConditionalExpectation":
        space = _as_space(dims)
        sites = tuple(sorted(int(s) for s in sites))
        if not sites or any(not 0 <= s < space.n_sites for s in sites) or len(set(sites)) != len(sites):
            raise ArgumentError(f"invalid traced sites {sites} for {space.n_sites} sites")
        return cls(space.dims, "trace_out_and_maximally_mix", sites)

    @classmethod
    def pinching(cls, dims, projectors: Sequence[np.ndarray]) -> "ConditionalExpectation":
        space = _as_space(dims)
        ps = tuple(np.asarray(p) for p in projectors)
        n = space.total_dim
        total = sum(ps)
        if any(p.shape != (n, n) for p in ps) or not np.allclose(total, np.eye(n), atol=1e-10):
            raise ArgumentError("projectors must resolve the identity")
        for p in ps:
            if not np.allclose(p @ p, p, atol=1e-10) or not np.allclose(p, p.conj().T, atol=1e-10):
                raise ArgumentError("pinching requires orthogonal projectors")
        return cls(space.dims, "custom_projection", (), ps)

    @classmethod
    def dephasing(cls, dims) -> "ConditionalExpectation":
        """Pinching onto the computational basis."""
        n = _as_space(dims).total_dim
        return cls.pinching(dims, [np.diag(np.eye(n)[k]) for k in range(n)])

    def __call__(self, op):
        return apply_conditional_expectation(self, op)


def apply_conditional_expectation(E: ConditionalExpectation, op):
    m = op if isinstance(op, Operator) else Operator(op, E.dims)
    if m.dims != E.dims:
        raise ArgumentError(f"operator on {m.dims} but expectation acts on {E.dims}")
    if E.kind == "custom_projection":
        return Operator(sum(p @ m.data @ p for p in E.projectors), m.space)
    keep = [s for s in range(len(E.dims)) if s not in E.traced]
    d_traced = int(np.prod([E.dims[s] for s in E.traced]))
    red = partial_trace(m, E.traced) / d_traced
    if not keep:
        return Operator(np.eye(m.shape[0]) * red.data[0, 0], m.space)
    return embed(red, E.dims, keep)


@dataclass(frozen=True)
class QuantumChannel:
    """Channel ``X -> sum_k K_k X K_k^dag`` between spaces of dimension ``d_in`` and ``d_out``."""

    kraus: tuple[np.ndarray, ...]

    def __post_init__(self):
        ks = tuple(np.asarray(k) for k in self.kraus)
        if not ks:
            raise ArgumentError("a channel needs at least one Kraus operator")
        shape = ks[0].shape
        if any(k.shape != shape for k in ks):
            raise ArgumentError("Kraus operators must share a shape")
        tp = sum(k.conj().T @ k for k in ks)
        if not np.allclose(tp, np.eye(shape[1]), atol=1e-9):
            raise ArgumentError("Kraus operators are not trace preserving")
        object.__setattr__(self, "kraus", ks)

    @property
    def d_in(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.kraus[0].shape[0]

    def __call__(self, x) -> np.ndarray:
        x = as_array(x)
        return sum(k @ x @ k.conj().T for k in self.kraus)

    def stinespring(self) -> np.ndarray:
        """Isometry ``V = sum_k K_k (x) |k>`` into output (x) environment."""
        ks = np.stack(self.kraus)  # (env, out, in)
        return ks.transpose(1, 0, 2).reshape(self.d_out * len(self.kraus), self.d_in)

    def adjoint(self, m) -> np.ndarray:
        """Heisenberg picture ``V^dag (M (x) 1_env) V``."""
        v = self.stinespring()
        big = np.kron(as_array(m), np.eye(len(self.kraus)))
        return v.conj().T @ big @ v

    @classmethod
    def partial_trace(cls, dims, traced_sites) -> "QuantumChannel":
        """Partial trace as a channel; Kraus ``1_keep (x) <k|_traced``."""
        space = _as_space(dims)
        keep = [s for s in range(space.n_sites) if s not in traced_sites]
        d_keep = int(np.prod([space.dims[s] for s in keep])) if keep else 1
        d_tr = int(np.prod([space.dims[s] for s in traced_sites]))
        eye = np.eye(space.total_dim)
        order = list(keep) + sorted(traced_sites)
        # rows of the permutation to keep-then-traced order
        idx = np.arange(space.total_dim).reshape(space.dims).transpose(order).reshape(-1)
        p = eye[idx]
        ks = []
        for k in range(d_tr):
            bra = np.zeros((1, d_tr))
            bra[0, k] = 1.0
            ks.append(np.kron(np.eye(d_keep), bra) @ p)
        return cls(tuple(ks))


def random_channel(d_in: int, d_out: int, n_kraus: int, rng: np.random.Generator) -> QuantumChannel:
    """Kraus operators cut from a Haar-like random isometry."""
    g = rng.normal(size=(d_out * n_kraus, d_in)) + 1j * rng.normal(size=(d_out * n_kraus, d_in))
    q, r = np.linalg.qr(g)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    blocks = q.reshape(d_out, n_kraus, d_in).transpose(1, 0, 2)
    return QuantumChannel(tuple(blocks))


# --- DPI bounds -------------------------------------------------------------


def _arr(x):
    return as_array(x)


def bs_recovery_asym(rho, sigma, E: ConditionalExpectation) -> Operator:
    """Asymmetric BS recovery ``rho E(rho)^-1 E(sigma)``; not Hermitian in general."""
    er = E(rho)
    if not kernel_contained(er, rho):
        raise ContractViolation("support of rho is not contained in that of E(rho)")
    es = E(sigma)
    out = _arr(rho) @ pseudo_inverse(er.data) @ es.data
    return Operator(out, E.dims)


def dpi_gap(rho, sigma, E) -> float:
    """``D_BS(rho || sigma) - D_BS(E(rho) || E(sigma))`` for an expectation or a channel."""
    if isinstance(E, QuantumChannel):
        er, es = E(rho), E(sigma)
    else:
        er, es = E(rho).data, E(sigma).data
    return dv.bs_entropy(rho, sigma).value - dv.bs_entropy(er, es).value


def _full_rank(m) -> bool:
    sd = spectral(m)
    return sd.rank == len(sd.eigenvalues)


def _unit(x) -> np.ndarray:
    """Identity, or the support projector of ``x`` when singular (with a warning)."""
    if _full_rank(x):
        return np.eye(x.shape[0])
    warnings.warn("singular argument: using pseudo-inverses restricted to the support", RuntimeWarning, stacklevel=3)
    return support_projector(x)


def _prefactor(x, y, ex) -> float:
    """``||X^-1/2 Y X^-1/2|| ||X||_1 ||E(X)^1/2|| ||E(X)^-1/2||``."""
    xs = pseudo_inv_sqrt(x)
    return (
        op_norm(xs @ y @ xs)
        * trace_norm(x)
        * op_norm(pseudo_sqrt(ex))
        * op_norm(pseudo_inv_sqrt(ex))
    )


def dpi_upper_bound(X, Y, E: ConditionalExpectation, variant: int = 1) -> float:
    """Product-of-norms upper bound on the BS-entropy DPI gap for a conditional expectation.

    ``variant=1`` ends in ``||E(Y)^-1 E(X)|| ||X Y^-1 E(Y) E(X)^-1 - 1||``;
    ``variant=2`` ends in ``||Y^-1 X|| ||Y X^-1 E(X) E(Y)^-1 - 1||``.
    """
    x, y = _arr(X), _arr(Y)
    ex, ey = E(X).data, E(Y).data
    one = _unit(x)
    pre = _prefactor(x, y, ex)
    if variant == 1:
        tail = op_norm(pseudo_inverse(ey) @ ex) * op_norm(x @ pseudo_inverse(y) @ ey @ pseudo_inverse(ex) - one)
    elif variant == 2:
        tail = op_norm(pseudo_inverse(y) @ x) * op_norm(y @ pseudo_inverse(x) @ ex @ pseudo_inverse(ey) - one)
    else:
        raise ArgumentError(f"variant must be 1 or 2, got {variant}")
    return float(pre * tail)


def dpi_upper_bound_channel(X, Y, T: QuantumChannel) -> float:
    """Channel version of the DPI bound, with ``T^*`` evaluated through the Stinespring isometry."""
    if not isinstance(T, QuantumChannel):
        raise ArgumentError("expected a QuantumChannel")
    x, y = _arr(X), _arr(Y)
    tx, ty = T(x), T(y)
    one = _unit(x)
    pre = _prefactor(x, y, tx)
    adj = T.adjoint(ty @ pseudo_inverse(tx))
    tail = op_norm(pseudo_inverse(ty) @ tx) * op_norm(x @ pseudo_inverse(y) @ adj - one)
    return float(pre * tail)


def strengthened_lower_bound(rho, sigma, E: ConditionalExpectation) -> float:
    """``(pi/8)^4 ||rho^-1/2 sigma rho^-1/2||^-4 ||E(rho)^-1||^-2 ||B - sigma||_2^4`` with B the BS recovery."""
    r, s = _arr(rho), _arr(sigma)
    rs = pseudo_inv_sqrt(r)
    a = op_norm(rs @ s @ rs)
    b = op_norm(pseudo_inverse(E(rho).data))
    resid = schatten_norm(bs_recovery_asym(rho, sigma, E).data - s, 2)
    return float(PI8_4 * a**-4 * b**-2 * resid**4)


@dataclass(frozen=True)
class DpiAudit:
    gap: float
    upper_bound_1: float
    upper_bound_2: float
    strengthened_lower_bound: float
    recovery_residual_1norm: float
    recovery_residual_2norm: float
    tol: float = 1e-8

    @property
    def ok(self) -> bool:
        vals = (self.gap, self.upper_bound_1, self.upper_bound_2, self.strengthened_lower_bound)
        if not all(math.isfinite(v) for v in vals):
            return True
        return (
            self.strengthened_lower_bound - self.tol <= self.gap
            and self.gap <= min(self.upper_bound_1, self.upper_bound_2) + self.tol
        )


def audit(rho, sigma, E: ConditionalExpectation) -> DpiAudit:
    rec = bs_recovery_asym(rho, sigma, E).data - _arr(sigma)
    return DpiAudit(
        dpi_gap(rho, sigma, E),
        dpi_upper_bound(rho, sigma, E, 1),
        dpi_upper_bound(rho, sigma, E, 2),
        strengthened_lower_bound(rho, sigma, E),
        schatten_norm(rec, 1),
        schatten_norm(rec, 2),
    )


# --- symmetric recovery -----------------------------------------------------


@dataclass(frozen=True)
class RecoveryKernel:
    """``K = rho_i^1/2 G^1/2 rho_i^-1/2`` with ``G = rho_i^-1/2 rho_pair rho_i^-1/2``.

    ``K`` acts on the pair space (block ``i`` then block ``i+1``); the map is
    ``X -> K (X (x) 1) K^dag``.
    """

    K: Operator
    rho_i: Operator
    rho_pair: Operator
    n_first: int

    @property
    def d_first(self) -> int:
        return int(np.prod(self.rho_pair.dims[: self.n_first]))

    @property
    def d_second(self) -> int:
        return int(np.prod(self.rho_pair.dims[self.n_first :]))

    @property
    def second_dims(self) -> tuple[int, ...]:
        return self.rho_pair.dims[self.n_first :]

    def apply(self, x) -> Operator:
        x = as_array(x)
        lifted = np.kron(x, np.eye(self.d_second))
        k = self.K.data
        return Operator(k @ lifted @ k.conj().T, self.rho_pair.dims)


def symmetric_recovery_kernel(rho_i, rho_pair, check: bool = True) -> RecoveryKernel:
    """Kernel of the symmetric recovery map recovering the second block of ``rho_pair``."""
    n_first = len(rho_i.dims)
    if rho_pair.dims[:n_first] != rho_i.dims or len(rho_pair.dims) <= n_first:
        raise ArgumentError(f"pair marginal on {rho_pair.dims} does not extend block {rho_i.dims}")
    if check:
        red = partial_trace(rho_pair, range(n_first, len(rho_pair.dims)))
        err = trace_distance(red, rho_i)
        if err > CONSISTENCY_TOL:
            raise ContractViolation(f"inconsistent marginals: ||tr_2 rho_pair - rho_i||_1 = {err:.3e}")
    dims = rho_pair.dims
    place = range(n_first)
    r_isq = embed(Operator(pseudo_inv_sqrt(rho_i.data), rho_i.space), dims, place).data
    r_sq = embed(Operator(pseudo_sqrt(rho_i.data), rho_i.space), dims, place).data
    g = r_isq @ rho_pair.data @ r_isq
    k = r_sq @ pseudo_sqrt(g) @ r_isq
    return RecoveryKernel(Operator(k, dims), rho_i, rho_pair, n_first)


def _mix(op: Operator, eps: float) -> Operator:
    if eps == 0:
        return op
    return Operator((1 - eps) * op.data + eps * maximally_mixed(op.space).data, op.space)


def kernels_from_pairs(
    pairs: Sequence[Operator], block_sites: Sequence[int], eps_reg: float = 0.0, check: bool = True
) -> tuple[list[RecoveryKernel], Operator]:
    """Kernels ``R_1 .. R_{N-1}`` from the pair marginals ``rho_{i:i+1}``.

    Single-block marginals are reductions of the pairs: ``rho_1 = tr_2
    rho_{1:2}`` and ``rho_{i+1} = tr_i rho_{i:i+1}``. Returns the kernels and
    ``rho_1``. ``block_sites`` gives the number of sites in each block.
    """
    if len(pairs) != len(block_sites) - 1:
        raise ArgumentError("need one pair marginal per adjacent block pair")
    if not 0 <= eps_reg < 1:
        raise ArgumentError("eps_reg must lie in [0, 1)")
    pairs = [_mix(p, eps_reg) for p in pairs]
    first = block_sites[0]
    rho_1 = partial_trace(pairs[0], range(first, len(pairs[0].dims)))
    kernels = []
    rho_i = rho_1
    for k, pair in enumerate(pairs):
        ni = block_sites[k]
        kern = symmetric_recovery_kernel(rho_i, pair, check=check and k > 0)
        kernels.append(kern)
        rho_i = partial_trace(pair, range(ni))
    return kernels, rho_1


def block_pairs(rho, partition: ChainPartition) -> list[Operator]:
    names = partition.names
    return [marginal(rho, partition, [a, b]) for a, b in zip(names, names[1:])]


def recovery_kernels(rho, partition: ChainPartition, eps_reg: float = 0.0):
    """Kernels and first-block marginal from the exact marginals of ``rho``."""
    sizes = [partition.size(nm) for nm in partition.names]
    if len(sizes) < 2:
        raise ArgumentError("need at least two blocks")
    return kernels_from_pairs(block_pairs(rho, partition), sizes, eps_reg)


def _apply_last(state: np.ndarray, d_prev: int, kern: RecoveryKernel) -> np.ndarray:
    """Apply ``1 (x) R`` where ``R`` acts on the last block of ``state``."""
    di, dn = kern.d_first, kern.d_second
    rho = state.reshape(d_prev, di, d_prev, di)
    k = kern.K.data.reshape(di, dn, di, dn)
    out = np.einsum("xyin,aibj,zwjn->axybzw", k, rho, k.conj(), optimize=True)
    d = d_prev * di * dn
    return out.reshape(d, d)


def sequential_reconstruct(kernels: Sequence[RecoveryKernel], rho_first) -> DensityMatrix:
    """``R_{N-1}( ... R_1(rho_1) ... )`` as a dense matrix on all blocks."""
    dims = tuple(rho_first.dims)
    for kern in kernels:
        dims = dims + kern.second_dims
    check_total_dim(dims)
    state = as_array(rho_first)
    cur = tuple(rho_first.dims)
    for kern in kernels:
        if kern.rho_i.dims != cur[len(cur) - kern.n_first :]:
            raise ArgumentError("kernel does not act on the last reconstructed block")
        d_prev = state.shape[0] // kern.d_first
        state = _apply_last(state, d_prev, kern)
        cur = cur + kern.second_dims
    state = (state + state.conj().T) / 2
    return DensityMatrix(state, dims, check=False)


def reconstruct(rho, partition: ChainPartition) -> DensityMatrix:
    """Sequential reconstruction from the exact block marginals of ``rho``."""
    kernels, rho_1 = recovery_kernels(rho, partition)
    return sequential_reconstruct(kernels, rho_1)


# --- audits -----------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzRecord:
    lhs: float  # ||(R_{N-1} o ... o R_j)(X)||_1
    mid: float  # ||rho_j^-1/2 X rho_j^-1/2||_1
    mid_op: float  # same, operator norm
    rhs: float  # ||rho_j^-1|| ||X||_1

    def holds(self, tol: float = 1e-8) -> bool:
        return self.lhs <= self.mid + tol and self.mid <= self.rhs + tol and self.lhs <= self.mid_op + tol


def lipschitz_check(kernels: Sequence[RecoveryKernel], X, j: int) -> LipschitzRecord:
    """Compare the concatenated map from block ``j`` (0-based) with its Lipschitz bounds."""
    if not 0 <= j < len(kernels):
        raise ArgumentError(f"block index {j} has no outgoing kernel")
    x = as_array(X)
    rho_j = kernels[j].rho_i
    if x.shape != rho_j.shape:
        raise ArgumentError("X must act on block j")
    if np.abs(x - x.conj().T).max() > 1e-10 or np.linalg.eigvalsh((x + x.conj().T) / 2)[0] < -1e-10:
        raise ArgumentError("X must be positive semidefinite")
    out = sequential_reconstruct(kernels[j:], Operator(x, rho_j.space))
    s = pseudo_inv_sqrt(rho_j.data)
    m = s @ x @ s
    return LipschitzRecord(
        trace_norm(out),
        trace_norm(m),
        op_norm(m),
        op_norm(pseudo_inverse(rho_j.data)) * trace_norm(x),
    )


@dataclass(frozen=True)
class SingleRecoveryRecord:
    i_rev: float
    gamma_norm: float
    residual_1norm: float
    lower_bound: float

    def holds(self, tol: float = 1e-8) -> bool:
        return self.i_rev >= self.lower_bound - tol


def single_recovery_error_bound(rho_abc, partition) -> SingleRecoveryRecord:
    """Reversed BS-CMI against ``(pi/8)^4 ||Gamma||^-2 ||R(rho_BC) - rho_ABC||_1^4``.

    ``R`` recovers A from B using ``rho_B`` and ``rho_AB``;
    ``Gamma = rho_BC^-1/2 rho_ABC rho_BC^-1/2``.
    """
    t = dv._tri(rho_abc, partition)
    na, nb, nc = t.na, t.nb, t.nc
    dims = t.abc.dims
    ab, bc = t.ab(), t.bc()
    if nb:
        b = t.b().data
        lift_b = lambda m: embed(Operator(m, dims[na : na + nb]), dims[: na + nb], range(na, na + nb)).data
        b_isq, b_sq = lift_b(pseudo_inv_sqrt(b)), lift_b(pseudo_sqrt(b))
        k = b_sq @ pseudo_sqrt(b_isq @ ab.data @ b_isq) @ b_isq
        k = embed(Operator(k, ab.space), dims, range(na + nb)).data
        rec = k @ embed(bc, dims, range(na, na + nb + nc)).data @ k.conj().T
    else:
        # empty B: R(X) = rho_A (x) X
        rec = np.kron(ab.data, bc.data)
    resid = trace_norm(rec - t.abc.data)
    bc_is = embed(Operator(pseudo_inv_sqrt(bc.data), bc.space), dims, range(na, na + nb + nc)).data
    gamma = op_norm(bc_is @ t.abc.data @ bc_is)
    i_rev = dv.bs_cmi_rev(t.abc, (na, nb, nc))
    return SingleRecoveryRecord(i_rev, gamma, resid, PI8_4 * gamma**-2 * resid**4)


@dataclass(frozen=True)
class ChainRecoveryReport:
    error: float
    rhs: float
    terms: tuple[float, ...]  # one per i = 2..N
    inv_norms: tuple[float, ...]
    i_max: tuple[float, ...]
    i_rev: tuple[float, ...]

    @property
    def holds(self) -> bool:
        return self.error <= self.rhs + 1e-8


def chain_recovery_bound(rho, partition: ChainPartition, reconstructed=None) -> ChainRecoveryReport:
    """Reconstruction error against ``16(N-1)/pi sup_i ||rho_i^-1|| exp(I_max/2) I_rev^(1/4)``.

    ``I_max = I_max(A_1..A_{i-1} : A_i)`` and ``I_rev = I_rev(A_i : A_1..A_{i-2} | A_{i-1})``
    for ``i = 2..N``; ``I_rev`` is zero for ``i = 2``.
    """
    names = partition.names
    N = len(names)
    if N < 2:
        raise ArgumentError("need at least two blocks")
    if reconstructed is None:
        reconstructed = reconstruct(rho, partition)
    err = trace_distance(reconstructed, rho)
    terms, invs, imaxs, irevs = [], [], [], []
    for i in range(2, N + 1):
        head = names[:i]
        rho_head = marginal(rho, partition, head)
        local = ChainPartition.from_sizes([(nm, partition.size(nm)) for nm in head])
        rho_i = marginal(rho_head, local, [names[i - 1]])
        inv = op_norm(pseudo_inverse(rho_i.data))
        cut = sum(partition.size(nm) for nm in names[: i - 1])
        imax = dv.max_mutual_info(rho_head, cut)
        if i >= 3:
            a = local.sites(names[i - 1])
            b = local.sites(names[i - 2])
            c = local.sites(names[: i - 2])
            irev = max(dv.bs_cmi_rev(rho_head, (a, b, c)), 0.0)
        else:
            irev = 0.0
        invs.append(inv)
        imaxs.append(imax)
        irevs.append(irev)
        terms.append(inv * math.exp(imax / 2) * irev**0.25)
    rhs = 16 * (N - 1) / math.pi * max(terms)
    return ChainRecoveryReport(err, rhs, tuple(terms), tuple(invs), tuple(imaxs), tuple(irevs))


# --- MPO --------------------------------------------------------------------


@dataclass(frozen=True)
class MpoState:
    """Tensors ``W_k[left, right, out, in]`` over blocks; boundary bonds are 1."""

    tensors: tuple[np.ndarray, ...]
    block_dims: tuple[tuple[int, ...], ...]

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.tensors) + (self.tensors[-1].shape[1],)

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self.block_dims)

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims)

    def to_text(self) -> str:
        lines = [
            "chainfactor-mpo 1",
            "block_sizes " + " ".join(map(str, self.block_sizes)),
            "site_dims " + " ".join(str(d) for dims in self.block_dims for d in dims),
            "bond_dims " + " ".join(map(str, self.bond_dims)),
        ]
        for k, t in enumerate(self.tensors):
            lines.append(f"tensor {k} " + " ".join(map(str, t.shape)))
            flat = np.asarray(t, dtype=complex).reshape(-1)
            lines.extend(f"{z.real!r} {z.imag!r}" for z in flat.tolist())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MpoState":
        it = iter(text.splitlines())

        def field(name):
            parts = next(it).split()
            if parts[0] != name:
                raise ArgumentError(f"expected {name!r}, got {parts[0]!r}")
            return [int(p) for p in parts[1:]]

        head = next(it).split()
        if head[:1] != ["chainfactor-mpo"]:
            raise ArgumentError("not an MPO file")
        sizes = field("block_sizes")
        site_dims = field("site_dims")
        field("bond_dims")
        block_dims, pos = [], 0
        for s in sizes:
            block_dims.append(tuple(site_dims[pos : pos + s]))
            pos += s
        tensors = []
        for k in range(len(sizes)):
            shape = field("tensor")[1:]
            count = int(np.prod(shape))
            vals = np.array([complex(*map(float, next(it).split())) for _ in range(count)])
            tensors.append(vals.reshape(shape))
        return cls(tuple(tensors), tuple(block_dims))


def mpo_export(kernels: Sequence[RecoveryKernel], rho_first, cutoff: float = MPO_CUTOFF) -> MpoState:
    """MPO of the sequential reconstruction, built one kernel at a time.

    Each step applies the kernel to the last tensor and splits it by SVD,
    dropping singular values below ``cutoff`` times the largest. The bond
    between blocks ``i`` and ``i+1`` is at most ``dim(A_{i+1})^2``.
    """
    r = as_array(rho_first)
    d0 = r.shape[0]
    tensors = [r.reshape(1, 1, d0, d0)]
    block_dims = [tuple(rho_first.dims)]
    for kern in kernels:
        w = tensors[-1]
        al, di = w.shape[0], w.shape[2]
        if di != kern.d_first:
            raise ArgumentError("kernel does not act on the last block")
        dn = kern.d_second
        k = kern.K.data.reshape(di, dn, di, dn)
        t = np.einsum("xyin,aij,zwjn->axzyw", k, w[:, 0], k.conj(), optimize=True)
        m = t.reshape(al * di * di, dn * dn)
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        keep = max(1, int(np.sum(s > cutoff * s[0]))) if s.size and s[0] > 0 else 1
        left = (u[:, :keep] * s[:keep]).reshape(al, di, di, keep).transpose(0, 3, 1, 2)
        right = vh[:keep].reshape(keep, 1, dn, dn)
        tensors[-1] = left
        tensors.append(right)
        block_dims.append(kern.second_dims)
    return MpoState(tuple(tensors), tuple(block_dims))


def mpo_contract(mpo: MpoState) -> DensityMatrix:
    dims = tuple(d for b in mpo.block_dims for d in b)
    check_total_dim(dims)
    acc = mpo.tensors[0][0]  # (right, out, in)
    acc = acc.transpose(1, 2, 0)  # (out, in, bond)
    for w in mpo.tensors[1:]:
        do, di = acc.shape[0], acc.shape[1]
        nxt = np.tensordot(acc, w, axes=([2], [0])).transpose(0, 3, 1, 4, 2)
        acc = nxt.reshape(do * w.shape[2], di * w.shape[3], w.shape[1])
    m = acc[:, :, 0]
    return DensityMatrix((m + m.conj().T) / 2, dims, check=False)
