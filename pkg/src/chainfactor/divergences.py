"""Entropies, relative entropies and conditional mutual information measures.

Region arguments come in two forms:

* a :class:`~chainfactor.spinchain.ChainPartition` with blocks named ``A``,
  ``B`` (and ``C`` for tripartite quantities), all other blocks traced out;
* a tuple of site lists, e.g. ``([4, 5], [2, 3], [0, 1])``, which may be
  in any spatial order. An ``int`` cut ``k`` for bipartite quantities means
  ``A = sites[:k]`` and ``B = sites[k:]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from chainfactor.errors import ArgumentError
from chainfactor.qop import (
    Operator,
    _check_sites,
    as_array,
    embed,
    identity,
    kernel_contained,
    maximally_mixed,
    partial_trace,
    permute_sites,
    pseudo_inv_sqrt,
    reduce_to,
    spectral,
)
from chainfactor.spinchain import ChainPartition

REPORT_CLIP = 1e6


@dataclass(frozen=True)
class DivergenceValue:
    """Extended-real divergence; ``value`` is ``inf`` exactly on kernel violation."""

    value: float
    finite: bool
    kernel_violation: bool

    @classmethod
    def infinite(cls) -> "DivergenceValue":
        return cls(math.inf, False, True)

    @classmethod
    def of(cls, v: float) -> "DivergenceValue":
        return cls(float(v), True, False)

    @property
    def reported(self) -> float:
        """Value clipped at 1e6 for tabular output."""
        return min(self.value, REPORT_CLIP)

    def __float__(self):
        return self.value


# --- region handling --------------------------------------------------------


def _regions(rho: Operator, regions, names) -> list[list[int]]:
    if isinstance(regions, ChainPartition):
        if regions.n != len(rho.dims):
            raise ArgumentError(f"partition covers {regions.n} sites, state has {len(rho.dims)}")
        return [regions.sites(nm, contiguous=False) for nm in names]
    regions = [list(r) for r in regions]
    if len(regions) != len(names):
        raise ArgumentError(f"expected {len(names)} regions, got {len(regions)}")
    _check_sites([s for r in regions for s in r], len(rho.dims))
    return regions


def _ordered(rho: Operator, regions, names) -> tuple[Operator, list[int]]:
    """Marginal on the union of the regions, permuted to region order.

    Returns the operator and the number of sites in each region.
    """
    regs = _regions(rho, regions, names)
    union = sorted(s for r in regs for s in r)
    red = reduce_to(rho, union)
    order = [union.index(s) for r in regs for s in r]
    return permute_sites(red, order), [len(r) for r in regs]


def _bipartite(rho: Operator, cut):
    if isinstance(cut, (int, np.integer)):
        k = int(cut)
        n = len(rho.dims)
        if not 0 < k < n:
            raise ArgumentError(f"cut {k} must split {n} sites into two nonempty parts")
        return rho, [k, n - k]
    return _ordered(rho, cut, ("A", "B"))


def _tripartite(rho: Operator, partition):
    if isinstance(partition, (tuple, list)) and len(partition) == 3 and all(
        isinstance(x, (int, np.integer)) for x in partition
    ):
        sizes = [int(x) for x in partition]
        if sum(sizes) != len(rho.dims):
            raise ArgumentError(f"region sizes {sizes} do not cover {len(rho.dims)} sites")
        return rho, sizes
    return _ordered(rho, partition, ("A", "B", "C"))


def _marg(rho: Operator, start: int, stop: int) -> Operator:
    return reduce_to(rho, range(start, stop))


# --- entropies and divergences ----------------------------------------------


def _eigvals(m) -> np.ndarray:
    m = as_array(m)
    return np.linalg.eigvalsh((m + m.conj().T) / 2)


def von_neumann(rho) -> float:
    """``-Tr rho log rho`` with ``0 log 0 = 0``."""
    p = _eigvals(rho)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def purity(rho) -> float:
    m = as_array(rho)
    return float(np.vdot(m, m).real)


def umegaki(rho, sigma) -> DivergenceValue:
    """``Tr rho (log rho - log sigma)``, or ``inf`` when ker sigma is not inside ker rho."""
    s = spectral(sigma)
    if not kernel_contained(s, rho):
        return DivergenceValue.infinite()
    p = _eigvals(rho)
    p = p[p > 0]
    term1 = float(np.sum(p * np.log(p)))
    logs = np.zeros_like(s.eigenvalues)
    logs[s.support] = np.log(s.eigenvalues[s.support])
    # Tr rho log sigma in sigma's eigenbasis
    diag = np.einsum("ij,jk,ki->i", s.eigenvectors.conj().T, as_array(rho), s.eigenvectors).real
    term2 = float(np.sum(diag * logs))
    return DivergenceValue.of(term1 - term2)


def bs_entropy(rho, sigma) -> DivergenceValue:
    """Belavkin-Staszewski entropy ``Tr rho log(rho^1/2 sigma^-1 rho^1/2)``.

    Evaluated on the support of ``rho``: with ``rho = V diag(p) V^dag`` the
    value is ``sum_i p_i <i| log M |i>`` where ``M = diag(sqrt p) V^dag
    sigma^+ V diag(sqrt p)``.
    """
    s = spectral(sigma)
    if not kernel_contained(s, rho):
        return DivergenceValue.infinite()
    r = spectral(rho)
    mask = r.eigenvalues > r.cutoff
    p = r.eigenvalues[mask]
    v = r.eigenvectors[:, mask]
    sp = np.sqrt(p)
    m = (v.conj().T @ s.power(-1.0) @ v) * np.outer(sp, sp)
    w, u = np.linalg.eigh((m + m.conj().T) / 2)
    if w[0] <= 0:
        return DivergenceValue.infinite()
    # diag of u log(w) u^dag
    logdiag = np.einsum("ik,k,ik->i", u, np.log(w), u.conj()).real
    return DivergenceValue.of(float(np.sum(p * logdiag)))


def d_max(rho, sigma) -> DivergenceValue:
    """Max-relative entropy ``log lambda_max(sigma^-1/2 rho sigma^-1/2)``."""
    s = spectral(sigma)
    if not kernel_contained(s, rho):
        return DivergenceValue.infinite()
    return _dmax_from(rho, s.power(-0.5))


def _dmax_from(rho, s_isq: np.ndarray) -> DivergenceValue:
    lam = _eigvals(s_isq @ as_array(rho) @ s_isq)[-1]
    if lam <= 0:
        return DivergenceValue.infinite()
    return DivergenceValue.of(math.log(lam))


# --- bipartite quantities ---------------------------------------------------


def _product_of_marginals(rho_ab: Operator, na: int) -> Operator:
    n = len(rho_ab.dims)
    a = partial_trace(rho_ab, range(na, n))
    b = partial_trace(rho_ab, range(na))
    return a.tensor(b)


def bs_cond_entropy(rho_ab, cut) -> float:
    """``-D_BS(rho_AB || 1_A (x) rho_B)``."""
    rho, (na, nb) = _bipartite(rho_ab, cut)
    b = partial_trace(rho, range(na))
    sigma = identity(rho.dims[:na]).tensor(b)
    return -bs_entropy(rho, sigma).value


def bs_mutual_info(rho_ab, cut) -> float:
    """``D_BS(rho_AB || rho_A (x) rho_B)``."""
    rho, (na, nb) = _bipartite(rho_ab, cut)
    return bs_entropy(rho, _product_of_marginals(rho, na)).value


def mutual_info(rho_ab, cut) -> float:
    """Umegaki mutual information ``S(A) + S(B) - S(AB)``."""
    rho, (na, nb) = _bipartite(rho_ab, cut)
    n = na + nb
    return (
        von_neumann(partial_trace(rho, range(na, n)))
        + von_neumann(partial_trace(rho, range(na)))
        - von_neumann(rho)
    )


def max_mutual_info(rho_ab, cut) -> float:
    """``D_max(rho_AB || rho_A (x) rho_B)``."""
    rho, (na, nb) = _bipartite(rho_ab, cut)
    n = na + nb
    # supp rho_AB lies inside supp rho_A (x) supp rho_B, so only the factors need inverting
    a = pseudo_inv_sqrt(partial_trace(rho, range(na, n)).data)
    b = pseudo_inv_sqrt(partial_trace(rho, range(na)).data)
    return _dmax_from(rho, np.kron(a, b)).value


# --- tripartite quantities --------------------------------------------------


@dataclass(frozen=True)
class _Tri:
    abc: Operator
    na: int
    nb: int
    nc: int

    @property
    def n(self):
        return self.na + self.nb + self.nc

    def ab(self):
        return _marg(self.abc, 0, self.na + self.nb)

    def bc(self):
        return _marg(self.abc, self.na, self.n)

    def b(self):
        return _marg(self.abc, self.na, self.na + self.nb)

    def a(self):
        return _marg(self.abc, 0, self.na)

    def pi_a(self):
        return maximally_mixed(self.abc.dims[: self.na])


def _tri(rho, partition) -> _Tri:
    abc, sizes = _tripartite(rho, partition)
    na, nb, nc = sizes
    if na == 0 or nc == 0:
        raise ArgumentError("regions A and C must be nonempty")
    return _Tri(abc, na, nb, nc)


def _bs(rho, sigma) -> float:
    return bs_entropy(rho, sigma).value


def _tensor(x: Operator, y: Operator | None) -> Operator:
    return x if y is None else x.tensor(y)


def cmi(rho_abc, partition) -> float:
    """``S(AB) + S(BC) - S(ABC) - S(B)``."""
    t = _tri(rho_abc, partition)
    s_b = von_neumann(t.b()) if t.nb else 0.0
    return von_neumann(t.ab()) + von_neumann(t.bc()) - von_neumann(t.abc) - s_b


def _b_or_none(t: _Tri):
    return t.b() if t.nb else None


def _ab_reference(t: _Tri, x_a: Operator) -> Operator:
    """``x_A (x) rho_B``, or just ``x_A`` when B is empty."""
    return _tensor(x_a, _b_or_none(t))


def bs_cmi_os(rho_abc, partition) -> float:
    """One-sided BS-CMI ``D(rho_ABC || pi_A rho_BC) - D(rho_AB || pi_A rho_B)``."""
    t = _tri(rho_abc, partition)
    pi = t.pi_a()
    return _bs(t.abc, pi.tensor(t.bc())) - _bs(t.ab(), _ab_reference(t, pi))


def bs_cmi_ts(rho_abc, partition) -> float:
    """Two-sided BS-CMI ``D(rho_ABC || rho_A rho_BC) - D(rho_AB || rho_A rho_B)``."""
    t = _tri(rho_abc, partition)
    a = t.a()
    return _bs(t.abc, a.tensor(t.bc())) - _bs(t.ab(), _ab_reference(t, a))


def bs_cmi_rev(rho_abc, partition) -> float:
    """Reversed BS-CMI ``D(pi_A rho_BC || rho_ABC) - D(pi_A rho_B || rho_AB)``."""
    t = _tri(rho_abc, partition)
    pi = t.pi_a()
    return _bs(pi.tensor(t.bc()), t.abc) - _bs(_ab_reference(t, pi), t.ab())


def purity_ratio(rho_abc, partition) -> float:
    """``Tr[rho_AB^2] Tr[rho_BC^2] / (Tr[rho_ABC^2] Tr[rho_B^2])``."""
    t = _tri(rho_abc, partition)
    p_b = purity(t.b()) if t.nb else 1.0
    return purity(t.ab()) * purity(t.bc()) / (purity(t.abc) * p_b)


def renyi2_cmi(rho_abc, partition) -> float:
    """``-log`` of :func:`purity_ratio`; may be negative."""
    return -math.log(purity_ratio(rho_abc, partition))


def lifted(op: Operator, dims, start: int) -> Operator:
    """Embed ``op`` on consecutive sites beginning at ``start``."""
    return embed(op, dims, range(start, start + len(op.dims)))
