"""Purity amplification: sample-complexity calculators and the EB baseline.

The entanglement-breaking baseline measures the covariant POVM
``M_U = d_lam U^[lam] |lw><lw| U^[lam] dag`` inside the Schur sector ``lam``
and re-prepares ``U |e_{d-k}><e_{d-k}| U^dag``. Because the effects act as
``M (x) I`` on (irrep copy) (x) (multiplicity), restricting to one irrep copy
is exact.

Two realizations of the per-sector weight ``<lw|(U^dag rho U)^{(x)n}|lw>`` are
provided: trailing principal minors of ``U^dag rho U`` (any ``n``), and the
explicit Young-symmetrizer vector (``n <= 4``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import schur
from .framework import ContinuousPovm
from .numerics import (
    DensityOperator,
    ValidationError,
    dagger,
    haar_unitary,
    make_rng,
    trace_distance,
)

C_DEFAULT = 2304  # C = 16 c^2 with c = 12


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def _ceil(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


# ---------------------------------------------------------------- spectra and reports

@dataclass(frozen=True)
class SpectrumParams:
    p: tuple
    k: int = 1

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if abs(sum(p) - 1) > 1e-10 or any(x < -1e-12 for x in p):
            raise ValidationError("spectrum must be a probability vector")
        if any(a < b - 1e-12 for a, b in zip(p, p[1:])):
            raise ValidationError("spectrum must be sorted descending")
        if not 1 <= self.k <= len(p):
            raise ValidationError("target index out of range")
        object.__setattr__(self, "p", p)
        if self.d_min <= 0:
            raise ValidationError("target eigenvalue is degenerate")

    @property
    def d(self) -> int:
        return len(self.p)

    def gap(self, i: int) -> float:
        """``D_{k,i} = p_k - p_i`` (1-based)."""
        return self.p[self.k - 1] - self.p[i - 1]

    @property
    def gaps(self) -> dict:
        return {i: self.gap(i) for i in range(1, self.d + 1) if i != self.k}

    @property
    def d_min(self) -> float:
        return min((abs(g) for g in self.gaps.values()), default=float("inf"))


@dataclass(frozen=True)
class QpaBoundReport:
    name: str
    value: float
    valid: bool
    constants: dict = field(default_factory=dict)
    asymptotic: bool = False
    details: dict = field(default_factory=dict)


# ---------------------------------------------------------------- coherent upper bounds

def s0_threshold(C: float = C_DEFAULT) -> float:
    """Largest root of ``S^2 = C S ln(C S)``; beyond it the inequality is strict.

    ``S - C ln(CS)`` is convex with its minimum at ``S = C``, so the large root
    is bracketed by ``[C, hi]`` and found by bisection.
    """
    f = lambda s: s - C * math.log(C * s)
    lo, hi = float(C), float(C)
    while f(hi) <= 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi


def coherent_sample_upper(m: int, eps: float, d_min: float, C: float = C_DEFAULT) -> QpaBoundReport:
    """Coherent QPA copies: ``min(N + C S ln(C S), 135 m/(eps D^2))``.

    ``N = m/(eps D^2)`` and ``S = sqrt(m)/(sqrt(eps) D^2)``. The remainder
    branch holds only for ``S > S0``.
    """
    if not (0 < d_min <= 1 and m >= 1 and 0 < eps <= 1):
        raise ValidationError("coherent_sample_upper parameters out of range")
    S = math.sqrt(m) / (math.sqrt(eps) * d_min ** 2)
    N = m / (eps * d_min ** 2)
    r_branch = N + C * S * math.log(C * S)
    b135 = 135 * m / (eps * d_min ** 2)
    s0 = s0_threshold(C)
    s_ok = S > s0
    candidates = [b135] + ([r_branch] if s_ok else [])
    return QpaBoundReport(
        "coherent_sample_upper",
        min(candidates),
        True,
        {"C": C, "S": S, "S0": s0, "N": N},
        details={"r_branch": r_branch, "r_branch_valid": s_ok, "branch_135": b135},
    )


def one_gap_upper(m: int, eps, d12) -> int:
    """``ceil(98 m / (eps D_{1,2}^2))``."""
    return _ceil(98 * Fraction(m) / (_exact(eps) * _exact(d12) ** 2))


def adjacent_gap_upper(m: int, eps, d_min, k: int, d: int) -> int:
    """98 for the extreme eigenstates ``k in {1, d}``, 135 for interior ones."""
    const = 98 if k in (1, d) else 135
    return _ceil(const * Fraction(m) / (_exact(eps) * _exact(d_min) ** 2))


def relative_gap_loss(n: int, beta: float, gaps: dict, c: dict, J: Sequence[int], d_min: float) -> QpaBoundReport:
    """Two-term bound ``sum c_j/D_{j,j+1} / (n(1-beta)) + 2|J| exp(-(beta sqrt(n) D - 4)^2/32)``."""
    first = sum(c[j] / gaps[j] for j in J) / (n * (1 - beta))
    second = 2 * len(J) * math.exp(-((beta * math.sqrt(n) * d_min - 4) ** 2) / 32)
    valid = 0 < beta < 1 and beta * d_min > 4 / math.sqrt(n)
    return QpaBoundReport("relative_gap_loss", first + second, valid, {"beta": beta},
                          details={"first": first, "second": second})


# ---------------------------------------------------------------- EB side

def eb_one_site_lower(n: int, d: int, k: int, d_min: float) -> QpaBoundReport:
    """``(1 - 8 exp(-n D^2/256)) (d-k) / (2(n+d-k))``, valid for ``n >= 4/D (1 + 1/D)``."""
    val = (1 - 8 * math.exp(-n * d_min ** 2 / 256)) * (d - k) / (2 * (n + d - k))
    threshold = 4 / d_min * (1 + 1 / d_min)
    return QpaBoundReport("eb_one_site_lower", val, n >= threshold - 1e-12, {"threshold": threshold})


def eb_asymptotic_coefficient(spec: SpectrumParams) -> float:
    k = spec.k
    a = sum(spec.p[i - 1] / spec.gap(i) ** 2 for i in spec.gaps)
    b = sum(1 / spec.gap(i) for i in range(k + 1, spec.d + 1))
    return a + b


def eb_asymptotic_fidelity(n: int, spec: SpectrumParams) -> QpaBoundReport:
    """First-order EB fidelity ``1 - coef/n``; the o(1/n) term is dropped."""
    coef = eb_asymptotic_coefficient(spec)
    return QpaBoundReport("eb_asymptotic_fidelity", 1 - coef / n, True, {"coefficient": coef}, asymptotic=True)


def eb_sample_lower(eps: float, d: int, k: int) -> QpaBoundReport:
    """``(d-k)/(2 eps) - (d-k)`` (the o(1) factor is dropped)."""
    a = d - k
    return QpaBoundReport("eb_sample_lower", a / (2 * eps) - a, True, asymptotic=True)


def separation_crossover(eps: float, k: int, d_min: float, m: int = 1, d_max: int = 10 ** 7):
    """Smallest ``d`` where the EB lower bound beats the 135-branch coherent bound."""
    coh = 135 * m / (eps * d_min ** 2)
    # eb_sample_lower is linear in d - k, so solve then confirm
    a = max(1, math.floor(coh / (1 / (2 * eps) - 1)))
    d = k + a
    while d > k + 1 and eb_sample_lower(eps, d - 1, k).value > coh:
        d -= 1
    while eb_sample_lower(eps, d, k).value <= coh:
        d += 1
        if d > d_max:
            return None
    return {"d": d, "eb_sample_lower": eb_sample_lower(eps, d, k).value, "coherent_135": coh}


# ---------------------------------------------------------------- nearest state

@dataclass(frozen=True)
class StateFamily:
    """Parameterized pure states ``params -> vector`` on a box."""

    d: int
    bounds: tuple
    vector: Callable
    grid: int = 12

    def state(self, params) -> np.ndarray:
        v = self.vector(np.asarray(params, float))
        return np.outer(v, v.conj())


def pure_state_family(d: int, grid: int | None = None) -> StateFamily:
    """All pure states on ``C^d`` in hyperspherical amplitude/phase coordinates."""

    def vec(x):
        ang, ph = x[: d - 1], x[d - 1:]
        amp = np.ones(d)
        for i, a in enumerate(ang):
            amp[i] *= np.cos(a)
            amp[i + 1:] *= np.sin(a)
        return amp * np.exp(1j * np.concatenate([[0.0], ph]))

    bounds = tuple([(0.0, np.pi / 2)] * (d - 1) + [(0.0, 2 * np.pi)] * (d - 1))
    if grid is None:
        grid = {2: 24, 3: 7}.get(d, 4)
    return StateFamily(d, bounds, vec, grid)


@dataclass(frozen=True)
class NearestState:
    state: DensityOperator
    params: np.ndarray
    distance: float
    converged: bool


def nearest_state_estimator(sigma, family: StateFamily, refine: bool = True) -> NearestState:
    """Family member closest to ``sigma`` in trace distance (grid, then Nelder-Mead).

    Ties on the grid keep the first grid point.
    """
    target = np.asarray(sigma.matrix if isinstance(sigma, DensityOperator) else sigma)
    axes = [np.linspace(lo, hi, family.grid) for lo, hi in family.bounds]
    best, best_x = np.inf, None
    for x in np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T:
        val = trace_distance(family.state(x), target)
        if val < best - 1e-13:
            best, best_x = val, x
    converged = True
    if refine:
        res = minimize(lambda x: trace_distance(family.state(x), target), best_x, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
        converged = bool(res.success)
        if res.fun < best:
            best, best_x = float(res.fun), res.x
    return NearestState(DensityOperator(family.state(best_x)), best_x, float(best), converged)


# ---------------------------------------------------------------- covariant EB protocol

def lowest_weight_space(lam, d: int) -> np.ndarray:
    """Orthonormal basis of all lowest-weight vectors in sector ``lam`` (one per copy)."""
    v = schur.lowest_weight_vector(lam, d)
    n = sum(schur._rows(lam))
    vecs = np.stack([schur._perm_dest(p, d) for p in schur.permutations_of(n)])
    cols = np.zeros((d ** n, len(vecs)), dtype=complex)
    for c, dst in enumerate(vecs):
        cols[dst, c] = v
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    r = schur.sn_dim(lam)
    return u[:, :r]


def _tensor_power_apply(A: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """``A^{(x)n} v`` for a stack ``A`` of shape ``(S, d, d)``."""
    S, d = A.shape[0], A.shape[1]
    t = np.broadcast_to(v.reshape((1,) + (d,) * n), (S,) + (d,) * n)
    for ax in range(1, n + 1):
        t = np.moveaxis(np.einsum("sij,s...j->s...i", A, np.moveaxis(t, ax, -1)), -1, ax)
    return t.reshape(S, -1)


def covariant_povm(d: int, n: int) -> ContinuousPovm:
    """Full-space covariant POVM ``sum_lam d_lam U^{(x)n} Pi_lw(lam) U^{dag (x)n}``."""
    pieces = []
    for lam in schur.partitions(n, d):
        pieces.append((schur.weyl_dim(lam, d), lowest_weight_space(lam, d)))

    def effect(U):
        out = 0
        for dim, B in pieces:
            W = _kron_power(U, n)
            WB = W @ B
            out = out + dim * WB @ dagger(WB)
        return out

    return ContinuousPovm(d, effect)


def _kron_power(U, n):
    out = U
    for _ in range(n - 1):
        out = np.kron(out, U)
    return out


def sector_povm_average(lam, d: int, samples: int, seed: int = 0) -> np.ndarray:
    """Monte-Carlo mean of ``d_lam Q^dag U^[lam] |lw><lw| U^[lam] dag Q`` (should be ``I``)."""
    n = sum(schur._rows(lam))
    Q = schur.irrep_copy_basis(lam, d)
    v = schur.lowest_weight_vector(lam, d)
    dim = schur.weyl_dim(lam, d)
    rng = make_rng(seed)
    acc = np.zeros((Q.shape[1], Q.shape[1]), dtype=complex)
    for start in range(0, samples, 4096):
        U = haar_unitary(d, rng, size=min(4096, samples - start))
        x = _tensor_power_apply(U, v, n) @ Q.conj()  # (S, dim) coordinates in the copy
        acc += x.T @ x.conj()
    return dim * acc / samples


@dataclass(frozen=True)
class EbProtocolResult:
    fidelity: float
    stderr: float
    effective_samples: float
    samples: int
    sectors: dict  # rows -> (probability, fidelity, stderr, ess)
    flagged: bool

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity


def _log_minor_weights(A: np.ndarray, d: int) -> np.ndarray:
    """``log det`` of the trailing ``i x i`` blocks, ``i = 1..d``; shape ``(S, d)``."""
    out = np.empty((A.shape[0], d))
    for i in range(1, d + 1):
        sign, logdet = np.linalg.slogdet(A[:, d - i:, d - i:])
        out[:, i - 1] = np.where(sign.real > 0, logdet, -np.inf)
    return out


def eb_covariant_protocol(rho, n: int, k: int, samples: int, seed: int, method: str = "minors",
                          streams: int = 1, chunk: int = 50_000) -> EbProtocolResult:
    """Fidelity of covariant-POVM tomography followed by re-preparation of level ``d-k``.

    For each Schur sector ``lam`` the fidelity ``int w f / int w`` is estimated
    by self-normalized importance sampling over Haar ``U`` with weight
    ``w = <lw|(U^dag rho U)^{(x)n}|lw>`` and payoff
    ``f = |<psi_k|U e_{d-k}>|^2``; sector results are averaged with the exact
    sector probabilities. All sectors share the same Haar draws.

    ``method="minors"`` evaluates ``w`` as a product of trailing principal
    minors; ``method="tableau"`` contracts the explicit lowest-weight vector
    (``n <= 4``).
    """
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    d = mat.shape[0]
    if not 1 <= k <= d:
        raise ValidationError("k out of range")
    w_eig, vecs = np.linalg.eigh(mat)
    order = np.argsort(w_eig)[::-1]
    p, vecs = np.clip(w_eig[order], 0, None), vecs[:, order]
    psi_k = vecs[:, k - 1]
    lams = schur.partitions(n, d)
    if method == "minors":
        probs = schur.sector_probabilities(tuple(p), n)
    elif method == "tableau":
        if n > 4:
            raise ValidationError("tableau realization is limited to n <= 4")
        big = _kron_power(mat, n)
        probs = {lam: float(np.real(np.trace(schur.isotypic_projector(lam, d) @ big))) for lam in lams}
        lw = {lam: schur.lowest_weight_vector(lam, d) for lam in lams}
    else:
        raise ValidationError(f"unknown method {method!r}")
    live = [lam for lam in lams if probs[lam] > 1e-14]
    # upper bound of log w per sector keeps exp() away from overflow
    logp = np.log(np.where(p > 0, p, 1e-300))
    shift = {lam: float(sum(r * logp[i] for i, r in enumerate(lam))) for lam in live}
    expo = {}
    for lam in live:
        pad = list(lam) + [0] * (d - len(lam)) + [0]
        expo[lam] = np.array([pad[i] - pad[i + 1] for i in range(d)], float)
    sums = {lam: np.zeros(3) for lam in live}  # sum w, sum w f, sum w^2
    sq = {lam: np.zeros(3) for lam in live}  # sum w^2 f, sum w^2 f^2 (and spare)
    per = -(-samples // streams)
    done = 0
    for s in range(streams):
        rng = make_rng(seed, s)
        todo = min(per, samples - done)
        while todo > 0:
            size = min(chunk, todo)
            U = haar_unitary(d, rng, size=size)
            A = dagger(U) @ mat @ U
            f = np.abs(U[:, :, d - k] @ psi_k.conj()) ** 2
            if method == "minors":
                logm = _log_minor_weights(A, d)
            for lam in live:
                if method == "minors":
                    e = expo[lam]
                    mask = e > 0
                    lw_ = (logm[:, mask] * e[mask]).sum(axis=1)
                    w = np.exp(lw_ - shift[lam])
                else:
                    x = _tensor_power_apply(A, lw[lam], n)
                    w = np.real(x @ lw[lam].conj()) / math.exp(shift[lam])
                    w = np.clip(w, 0, None)
                sums[lam] += [w.sum(), (w * f).sum(), (w * w).sum()]
                sq[lam] += [(w * w * f).sum(), (w * w * f * f).sum(), 0.0]
            todo -= size
            done += size
    sector_out = {}
    total_f, total_var, inv_neff = 0.0, 0.0, 0.0
    flagged = False
    for lam in live:
        sw, swf, sww = sums[lam]
        swwf, swwff, _ = sq[lam]
        if sw <= 0:
            raise ValidationError(f"sector {lam} weight is numerically zero")
        F = swf / sw
        var = max(swwff - 2 * F * swwf + F * F * sww, 0.0) / sw ** 2
        ess = sw * sw / sww
        flagged |= ess < 100
        sector_out[lam] = (probs[lam], F, math.sqrt(var), ess)
        total_f += probs[lam] * F
        total_var += probs[lam] ** 2 * var
        inv_neff += probs[lam] ** 2 / ess
    norm = sum(probs[lam] for lam in live)
    return EbProtocolResult(total_f / norm, math.sqrt(total_var) / norm, 1 / inv_neff, samples, sector_out, flagged)


def fit_inverse_n(ns: Sequence[int], infidelities: Sequence[float]) -> dict:
    """Least-squares fit ``infidelity = a + b/n``; returns slope ``b`` and intercept ``a``."""
    x = 1 / np.asarray(ns, float)
    b, a = np.polyfit(x, np.asarray(infidelities, float), 1)
    through_origin = float(x @ np.asarray(infidelities, float) / (x @ x))
    return {"slope": float(b), "intercept": float(a), "slope_through_origin": through_origin}
