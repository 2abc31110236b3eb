"""Symmetric-group and unitary-group tools on ``(C^d)^{(x)n}``.

Integer data (characters, dimensions) are exact; projectors and vectors are
float arrays. Permutations are tuples ``perm`` with ``perm[i]`` the slot that
tensor factor ``i`` is sent to.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial, prod
from typing import Iterable, Sequence

import numpy as np

from .numerics import DensityOperator, ValidationError, as_rng, permute_subsystems


# ---------------------------------------------------------------- partitions

@dataclass(frozen=True, order=True)
class YoungDiagram:
    rows: tuple
    d: int | None = None

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows if int(r) != 0)
        if any(r < 0 for r in rows) or any(a < b for a, b in zip(rows, rows[1:])):
            raise ValidationError(f"rows {self.rows} are not a partition")
        if self.d is not None and len(rows) > self.d:
            raise ValidationError(f"partition {rows} has more than d={self.d} rows")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return sum(self.rows)

    def padded(self, d: int | None = None) -> tuple:
        d = self.d if d is None else d
        return self.rows + (0,) * (d - len(self.rows))

    def gap(self, i: int, j: int) -> int:
        """Row gap between 1-based rows ``i`` and ``j`` (zero padded)."""
        p = self.padded(max(i, j, len(self.rows)))
        return p[i - 1] - p[j - 1]


def _rows(lam) -> tuple:
    if isinstance(lam, YoungDiagram):
        return lam.rows
    return tuple(int(r) for r in lam if int(r) != 0)


def partitions(n: int, max_rows: int | None = None) -> list[tuple]:
    """Partitions of ``n`` in lexicographic order, optionally with at most ``max_rows`` parts."""
    out = []

    def rec(rem, cap, acc):
        if rem == 0:
            out.append(tuple(acc))
            return
        if max_rows is not None and len(acc) >= max_rows:
            return
        for part in range(min(rem, cap), 0, -1):
            rec(rem - part, part, acc + [part])

    rec(n, n, [])
    return sorted(out)


def multiset_dim(d: int, n: int) -> int:
    """Dimension of the symmetric subspace of ``(C^d)^{(x)n}``."""
    if d < 1 or n < 0:
        raise ValidationError("multiset_dim needs d >= 1 and n >= 0")
    return comb(n + d - 1, d - 1)


def hook_lengths(lam) -> list[int]:
    rows = _rows(lam)
    cols = [sum(1 for r in rows if r > j) for j in range(rows[0])] if rows else []
    return [rows[i] - j + cols[j] - i - 1 for i in range(len(rows)) for j in range(rows[i])]


def sn_dim(lam) -> int:
    """Dimension of the ``S_n`` irrep (hook length formula)."""
    rows = _rows(lam)
    return factorial(sum(rows)) // prod(hook_lengths(rows))


def cycle_type(perm: Sequence[int]) -> tuple:
    seen = [False] * len(perm)
    lengths = []
    for s in range(len(perm)):
        if seen[s]:
            continue
        k, c = s, 0
        while not seen[k]:
            seen[k] = True
            k = perm[k]
            c += 1
        lengths.append(c)
    return tuple(sorted(lengths, reverse=True))


def n_cycles(perm: Sequence[int]) -> int:
    return len(cycle_type(perm))


@lru_cache(maxsize=None)
def _mn(beta: frozenset, mu: tuple) -> int:
    # Murnaghan-Nakayama on a beta set: removing a rim hook of length k means
    # moving a bead from b to b-k; the sign counts beads jumped over.
    if not mu:
        return 1
    k, rest = mu[0], mu[1:]
    total = 0
    for b in beta:
        t = b - k
        if t < 0 or t in beta:
            continue
        height = sum(1 for x in beta if t < x < b)
        total += (-1) ** height * _mn(beta - {b} | {t}, rest)
    return total


def sn_character(lam, mu) -> int:
    """Character of irrep ``lam`` at cycle type ``mu`` (Murnaghan-Nakayama)."""
    rows, mu = _rows(lam), _rows(mu)
    if sum(rows) != sum(mu):
        raise ValidationError(f"{rows} and {mu} are partitions of different n")
    L = len(rows)
    beta = frozenset(rows[i] + (L - 1 - i) for i in range(L))
    return _mn(beta, tuple(sorted(mu, reverse=True)))


def weyl_dim(lam, d: int) -> int:
    """Dimension of the ``U(d)`` irrep with highest weight ``lam``."""
    rows = _rows(lam)
    if len(rows) > d:
        return 0
    s = rows + (0,) * (d - len(rows))
    val = Fraction(1)
    for i in range(d):
        for j in range(i + 1, d):
            val *= Fraction(s[i] - s[j] + j - i, j - i)
    assert val.denominator == 1
    return int(val)


def dimension_ratio(varsigma, k: int, d: int) -> Fraction:
    """``weyl_dim(s, d) / weyl_dim(alpha, d-1)`` with ``alpha`` = ``s`` minus row ``k``.

    Evaluated through the closed product over row gaps, never through the two
    dimensions; ``k`` is 1-based.
    """
    rows = _rows(varsigma)
    if not 1 <= k <= d or len(rows) > d:
        raise ValidationError(f"invalid row index k={k} for d={d}")
    s = rows + (0,) * (d - len(rows))
    gap = lambda i, j: s[i - 1] - s[j - 1]
    val = Fraction(1, factorial(d - 1))
    for i in range(1, k):
        val *= gap(i, k) + k - i
    for j in range(k + 1, d + 1):
        val *= gap(k, j) - k + j
    for i in range(1, k):
        for j in range(k + 1, d + 1):
            val *= Fraction(gap(i, j) - i + j, gap(i, j) - i + j - 1)
    return val


def delete_row(varsigma, k: int, d: int) -> tuple:
    s = list(_rows(varsigma) + (0,) * (d - len(_rows(varsigma))))
    del s[k - 1]
    return tuple(x for x in s if x)


# ---------------------------------------------------------------- schur polynomials

@lru_cache(maxsize=None)
def _schur_poly(rows: tuple, x: tuple) -> float:
    # branching rule: s_lam(x_1..x_d) = sum_{mu interlacing lam} x_d^{|lam|-|mu|} s_mu(x_1..x_{d-1})
    d = len(x)
    if len(rows) > d:
        return 0.0
    if d == 0:
        return 1.0 if not rows else 0.0
    lam = rows + (0,) * (d - len(rows))
    if d == 1:
        return x[0] ** lam[0]
    ranges = [range(lam[i + 1], lam[i] + 1) for i in range(d - 1)]
    total = 0.0
    for mu in itertools.product(*ranges):
        total += x[-1] ** (sum(lam) - sum(mu)) * _schur_poly(tuple(m for m in mu if m), x[:-1])
    return total


def schur_polynomial(lam, x) -> float:
    return _schur_poly(_rows(lam), tuple(float(v) for v in x))


def sector_probabilities(p, n: int) -> dict:
    """``Tr(P_lam rho^{(x)n})`` for a state with spectrum ``p``, for every ``lam``.

    Equal to ``sn_dim(lam) * s_lam(p)``.
    """
    d = len(p)
    return {lam: sn_dim(lam) * schur_polynomial(lam, p) for lam in partitions(n, d)}


# ---------------------------------------------------------------- projectors

def permutations_of(n: int) -> list[tuple]:
    return list(itertools.permutations(range(n)))


def _perm_dest(perm: Sequence[int], d: int) -> np.ndarray:
    n = len(perm)
    D = d ** n
    multi = np.array(np.unravel_index(np.arange(D), (d,) * n))
    out = np.empty_like(multi)
    out[list(perm)] = multi
    return np.ravel_multi_index(tuple(out), (d,) * n)


@lru_cache(maxsize=64)
def _isotypic(rows: tuple, d: int) -> np.ndarray:
    n = sum(rows)
    D = d ** n
    P = np.zeros((D, D))
    cols = np.arange(D)
    chars = {}
    for perm in permutations_of(n):
        ct = cycle_type(perm)
        if ct not in chars:
            chars[ct] = sn_character(rows, ct)
        if chars[ct]:
            P[_perm_dest(perm, d), cols] += chars[ct]
    P *= sn_dim(rows) / factorial(n)
    P.setflags(write=False)
    return P


def isotypic_projector(lam, d: int | None = None) -> np.ndarray:
    """Projector onto the ``lam`` isotypic component of ``(C^d)^{(x)n}``."""
    if isinstance(lam, YoungDiagram) and d is None:
        d = lam.d
    if d is None:
        raise ValidationError("isotypic_projector needs the local dimension d")
    rows = _rows(lam)
    n = sum(rows)
    if len(rows) > d:
        warnings.warn(f"partition {rows} has more than {d} rows; projector is zero", stacklevel=2)
        return np.zeros((d ** n, d ** n))
    return _isotypic(rows, d)


def types(d: int, n: int) -> list[tuple]:
    """Occupation vectors of length ``d`` summing to ``n``, lexicographic."""
    return sorted(t for t in itertools.product(range(n + 1), repeat=d) if sum(t) == n)


@lru_cache(maxsize=32)
def type_basis(d: int, n: int) -> np.ndarray:
    """Orthonormal symmetric type states as columns, ordered like :func:`types`."""
    D = d ** n
    digits = np.array(np.unravel_index(np.arange(D), (d,) * n)).T if n else np.zeros((1, 0), int)
    occ = np.stack([(digits == i).sum(axis=1) for i in range(d)], axis=1)
    tlist = types(d, n)
    lookup = {t: c for c, t in enumerate(tlist)}
    col = np.array([lookup[tuple(o)] for o in occ])
    V = np.zeros((D, len(tlist)))
    V[np.arange(D), col] = 1.0
    V /= np.sqrt(V.sum(axis=0))
    V.setflags(write=False)
    return V


def symmetric_projector(d: int, n: int) -> np.ndarray:
    V = type_basis(d, n)
    return V @ V.T


@dataclass(frozen=True)
class SectorDecomposition:
    d: int
    n: int
    sectors: dict  # rows -> (projector, probability)

    def probabilities(self) -> dict:
        return {k: v[1] for k, v in self.sectors.items()}


def sector_decomposition(Sigma, d: int, n: int) -> SectorDecomposition:
    mat = Sigma.matrix if isinstance(Sigma, DensityOperator) else np.asarray(Sigma)
    if mat.shape != (d ** n, d ** n):
        raise ValidationError("state does not live on (C^d)^n")
    sec = {}
    for lam in partitions(n, d):
        P = isotypic_projector(lam, d)
        sec[lam] = (P, float(np.real(np.trace(P @ mat))))
    return SectorDecomposition(d, n, sec)


def schur_sample(Sigma, d: int, n: int, rng=None):
    """Measure the Young-diagram label; return ``(YoungDiagram, post-measurement state)``."""
    rng = as_rng(rng)
    dec = sector_decomposition(Sigma, d, n)
    labels = list(dec.sectors)
    probs = np.clip([dec.sectors[k][1] for k in labels], 0, None)
    if probs.sum() < 1e-12:
        raise ValidationError("all sector probabilities vanish")
    probs = probs / probs.sum()
    pick = labels[rng.choice(len(labels), p=probs)]
    P, pr = dec.sectors[pick]
    mat = Sigma.matrix if isinstance(Sigma, DensityOperator) else np.asarray(Sigma)
    post = P @ mat @ P / pr
    return YoungDiagram(pick, d), DensityOperator(0.5 * (post + post.conj().T), (d,) * n)


# ---------------------------------------------------------------- tableaux and weights

def _canonical_tableau(rows: tuple) -> list[list[int]]:
    t, c = [], 0
    for r in rows:
        t.append(list(range(c, c + r)))
        c += r
    return t


def _group_elements(blocks: list[list[int]], n: int, signed: bool):
    """All permutations preserving each block, with their signs."""
    out = []
    for combo in itertools.product(*[itertools.permutations(b) for b in blocks]):
        perm = list(range(n))
        for block, img in zip(blocks, combo):
            for a, b in zip(block, img):
                perm[a] = b
        sign = 1
        if signed:
            sign = (-1) ** (n - n_cycles(perm))
        out.append((tuple(perm), sign))
    return out


@lru_cache(maxsize=64)
def young_symmetrizer(rows: tuple, d: int) -> np.ndarray:
    """``b_T a_T`` (column antisymmetrizer after row symmetrizer) as a matrix on ``(C^d)^{(x)n}``."""
    n = sum(rows)
    tab = _canonical_tableau(rows)
    cols = [[tab[i][j] for i in range(len(tab)) if len(tab[i]) > j] for j in range(rows[0])]
    D = d ** n
    idx = np.arange(D)

    def op(elements):
        M = np.zeros((D, D))
        for perm, sign in elements:
            M[_perm_dest(perm, d), idx] += sign
        return M

    A = op(_group_elements(tab, n, False))
    B = op(_group_elements(cols, n, True))
    E = B @ A
    E.setflags(write=False)
    return E


def _lw_labels(rows: tuple, d: int) -> list[int]:
    """Basis label of each box: boxes in row ``i`` (0-based) hold ``d-1-i``."""
    labels = []
    for i, r in enumerate(rows):
        labels += [d - 1 - i] * r
    return labels


def lowest_weight_vector(lam, d: int | None = None) -> np.ndarray:
    """Lowest-weight vector of one irrep copy in sector ``lam``.

    Built by applying the canonical Young symmetrizer to the computational
    tensor whose row-``i`` boxes carry level ``d-1-i``; its weight is the
    reversed partition.
    """
    if isinstance(lam, YoungDiagram) and d is None:
        d = lam.d
    rows = _rows(lam)
    if len(rows) > d:
        raise ValidationError(f"{rows} has more than d={d} rows")
    n = sum(rows)
    labels = _lw_labels(rows, d)
    t = np.zeros(d ** n)
    t[np.ravel_multi_index(tuple(labels), (d,) * n)] = 1.0
    v = young_symmetrizer(rows, d) @ t
    nv = np.linalg.norm(v)
    if nv < 1e-12:
        raise ValidationError("Young symmetrizer annihilated the seed tensor")
    return (v / nv).astype(complex)


@lru_cache(maxsize=64)
def _irrep_copy(rows: tuple, d: int) -> np.ndarray:
    E = young_symmetrizer(rows, d)
    u, s, _ = np.linalg.svd(E)
    r = weyl_dim(rows, d)
    if r == 0 or s[r - 1] < 1e-9 * s[0] or (len(s) > r and s[r] > 1e-9 * s[0]):
        raise ValidationError("unexpected rank of the Young symmetrizer image")
    Q = u[:, :r].astype(complex)
    Q.setflags(write=False)
    return Q


def irrep_copy_basis(lam, d: int) -> np.ndarray:
    """Orthonormal basis (columns) of the irrep copy that contains the lowest-weight vector."""
    return _irrep_copy(_rows(lam), d)


def weight_of(v, d: int, n: int, atol: float = 1e-10):
    """Occupation vector shared by the support of ``v``, or ``None``."""
    v = np.asarray(v).reshape(-1)
    support = np.nonzero(np.abs(v) > atol)[0]
    if support.size == 0:
        return None
    digits = np.array(np.unravel_index(support, (d,) * n)).T
    occ = {tuple(int((row == i).sum()) for i in range(d)) for row in digits}
    return occ.pop() if len(occ) == 1 else None


def torus_phase(v, theta, d: int, n: int) -> np.ndarray:
    """Apply ``diag(exp(i theta))^{(x)n}`` to ``v``."""
    D = np.exp(1j * np.asarray(theta))
    digits = np.array(np.unravel_index(np.arange(d ** n), (d,) * n))
    ph = np.prod(D[digits], axis=0)
    return ph * np.asarray(v)


def type_permutation_action(sigma: Sequence[int], v, d: int, n: int) -> np.ndarray:
    """Apply ``P_sigma^{(x)n}`` (``P_sigma |i> = |sigma(i)>``) to a weight vector."""
    if weight_of(v, d, n) is None:
        raise ValidationError("vector has no definite weight")
    P = np.zeros((d, d))
    P[list(sigma), np.arange(d)] = 1.0
    t = np.asarray(v).reshape((d,) * n)
    for ax in range(n):
        t = np.moveaxis(np.tensordot(P, t, axes=([1], [ax])), 0, ax)
    return t.reshape(-1)


# ---------------------------------------------------------------- twirling

def commutant_twirl(X, dims: Sequence[int], twirled: Iterable[int]) -> np.ndarray:
    """Haar twirl ``E_U[U^{(x)k} X U^{dag (x)k}]`` over the factors in ``twirled``.

    Computed exactly as the Hilbert-Schmidt projection onto
    ``span{U_pi} (x) B(rest)``; the Gram matrix ``r^{cycles(pi^-1 tau)}`` is
    pseudo-inverted so dependent permutations (``r < k``) are fine.
    """
    dims = tuple(dims)
    tw = list(twirled)
    rest = [i for i in range(len(dims)) if i not in tw]
    r = dims[tw[0]]
    if any(dims[i] != r for i in tw):
        raise ValidationError("twirled factors must have equal dimension")
    k = len(tw)
    order = tw + rest
    X = np.asarray(X, dtype=complex)
    Xp = permute_subsystems(X, dims, order)
    Dk = r ** k
    R = int(np.prod([dims[i] for i in rest])) if rest else 1
    X4 = Xp.reshape(Dk, R, Dk, R)
    perms = permutations_of(k)
    dests = [_perm_dest(p, r) for p in perms]
    cols = np.arange(Dk)
    b = np.stack([X4[dst, :, cols, :].sum(axis=0) for dst in dests])  # Tr_tw[U_pi^T X]
    G = np.empty((len(perms), len(perms)))
    for a, p in enumerate(perms):
        inv = np.argsort(p)
        for c, q in enumerate(perms):
            G[a, c] = float(r) ** n_cycles([inv[q[i]] for i in range(k)])
    coef = np.tensordot(np.linalg.pinv(G, rcond=1e-12), b, axes=1)
    Y4 = np.zeros_like(X4)
    for dst, c in zip(dests, coef):
        Y4[dst, :, cols, :] += c
    Y = Y4.reshape(Dk * R, Dk * R)
    inv_order = list(np.argsort(order))
    return permute_subsystems(Y, tuple(dims[i] for i in order), inv_order)
