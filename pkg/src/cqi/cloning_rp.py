"""Random purification, Werner's optimal cloner and the RP/EB fidelity formulas."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import schur
from .numerics import (
    Channel,
    DensityOperator,
    ValidationError,
    dagger,
    fidelity,
    haar_unitary,
    make_rng,
    ptrace,
)
from .schur import multiset_dim


@dataclass(frozen=True)
class RpSpec:
    n: int
    m: int
    d: int
    r: int = 1

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or not 1 <= self.r <= self.d:
            raise ValidationError(f"invalid RP spec {self}")

    @property
    def D(self) -> int:
        return self.d * self.r


# ---------------------------------------------------------------- formulas

def f_all_bound(spec: RpSpec) -> Fraction:
    """Optimal all-site RP fidelity ``multiset(dr, n) / multiset(dr, m)``."""
    if spec.n >= spec.m:
        return Fraction(1)
    return Fraction(multiset_dim(spec.D, spec.n), multiset_dim(spec.D, spec.m))


def f_one_bound(spec: RpSpec) -> Fraction:
    """One-site fidelity ``(n(m+dr) + m - n) / (m(n+dr))`` of purify-and-clone."""
    n, m, D = spec.n, spec.m, spec.D
    if n >= m:
        return Fraction(1)
    return Fraction(n * (m + D) + m - n, m * (n + D))


def eb_tomography_risk(n: int, m: int, d: int, site: str = "all") -> Fraction:
    """Optimal average EB losses for pure-state cloning.

    ``site="all"`` gives ``1 - multiset(d, n) / multiset(d, n + m)``;
    ``site="one"`` gives the displayed one-site value ``(d-1)/(n+1)``.
    See :func:`eb_one_site_exact` for the value attained by the optimal
    measure-and-prepare protocol.
    """
    if n < 1 or m < 1:
        raise ValidationError("n and m must be positive")
    if site == "all":
        return 1 - Fraction(multiset_dim(d, n), multiset_dim(d, n + m))
    if site == "one":
        return Fraction(d - 1, n + 1)
    raise ValidationError(f"unknown site {site!r}")


def eb_one_site_exact(n: int, d: int) -> Fraction:
    """One-site infidelity of covariant pure-state tomography, ``(d-1)/(n+d)``.

    Equals the all-site EB value at ``m = 1``.
    """
    return Fraction(d - 1, n + d)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass(frozen=True)
class SeparationTable:
    rows: list  # (n, coherent one-site infidelity, EB one-site infidelity) as Fractions
    coherent_slope: float
    eb_slope: float


def separation_table(d: int, r: int, ell: int, ns: Sequence[int]) -> SeparationTable:
    rows = []
    for n in ns:
        coh = 1 - f_one_bound(RpSpec(n, n + ell, d, r))
        eb = eb_tomography_risk(n, n + ell, d, "one")
        rows.append((n, coh, eb))
    xs = [row[0] for row in rows]
    return SeparationTable(
        rows,
        loglog_slope(xs, [float(row[1]) for row in rows]),
        loglog_slope(xs, [float(row[2]) for row in rows]),
    )


# ---------------------------------------------------------------- cloner

def _cloner_constant(n: int, m: int, D: int) -> float:
    return multiset_dim(D, n) / multiset_dim(D, m)


def werner_cloner(n: int, m: int, D: int) -> Channel:
    """Optimal symmetric ``n -> m`` cloner on ``C^D`` as a Kraus channel.

    On symmetric inputs it acts as ``c S_m (X (x) I) S_m`` with
    ``c = multiset(D, n) / multiset(D, m)``. Inputs outside the symmetric
    subspace are sent to ``(I - S_n) X (I - S_n) (x) |0..0><0..0|`` so that the
    family is trace preserving on the whole input space.
    """
    if m < n:
        raise ValidationError("werner_cloner needs m >= n")
    if D ** m > 4096:
        raise ValidationError("D^m exceeds 4096")
    Sn = schur.symmetric_projector(D, n)
    if m == n:
        return Channel(np.stack([Sn, np.eye(D ** n) - Sn]), (D,) * n, (D,) * m)
    Vm = schur.type_basis(D, m)
    Sm = (Vm @ Vm.T).reshape(D ** m, D ** n, D ** (m - n))
    ks = np.sqrt(_cloner_constant(n, m, D)) * Sm.transpose(2, 0, 1)
    zero = np.zeros(D ** (m - n))
    zero[0] = 1.0
    L = np.kron(np.eye(D ** n) - Sn, zero[:, None])
    return Channel(np.concatenate([ks, L[None]]), (D,) * n, (D,) * m)


def apply_cloner(X: np.ndarray, n: int, m: int, D: int) -> np.ndarray:
    """Same action as :func:`werner_cloner` without building Kraus operators."""
    X = np.asarray(X)
    if m == n:
        Sn = schur.symmetric_projector(D, n)
        R = np.eye(D ** n) - Sn
        return Sn @ X @ Sn + R @ X @ R
    Vn = schur.type_basis(D, n)
    Vm = schur.type_basis(D, m)
    V3 = Vm.reshape(D ** n, D ** (m - n), -1)
    core = np.einsum("akx,ab,bky->xy", V3, X, V3)
    out = _cloner_constant(n, m, D) * (Vm @ core @ Vm.T)
    Pn = Vn @ Vn.T
    R = X - Pn @ X - X @ Pn + Pn @ X @ Pn
    if np.max(np.abs(R)) > 0:
        zero = np.zeros((D ** (m - n),) * 2)
        zero[0, 0] = 1.0
        out = out + np.kron(R, zero)
    return out


# ---------------------------------------------------------------- random purification

def purification(rho, r: int | None = None) -> np.ndarray:
    """``Psi_0 = sum_i sqrt(p_i) |psi_i> (x) |i>`` with ``p`` sorted descending.

    The environment keeps the first ``r`` levels; ``r`` defaults to the rank.
    """
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    w, v = np.linalg.eigh(mat)
    order = np.argsort(w)[::-1]
    w, v = np.clip(w[order], 0, None), v[:, order]
    d = len(w)
    if r is None:
        r = int(np.sum(w > 1e-12))
    if np.any(w[r:] > 1e-10):
        raise ValidationError(f"state has rank above r={r}")
    psi = np.zeros((d, r), dtype=complex)
    for i in range(r):
        psi[:, i] = np.sqrt(w[i]) * v[:, i]
    return psi.reshape(-1)


def _copies(psi0: np.ndarray, n: int) -> np.ndarray:
    out = psi0
    for _ in range(n - 1):
        out = np.kron(out, psi0)
    return out


def rp_twirl_exact(psi0: np.ndarray, d: int, r: int, n: int) -> np.ndarray:
    """``int dU [(I (x) U) Psi_0 (I (x) U)^dag]^{(x)n}`` by commutant projection.

    Registers are ordered ``sys_1 env_1 sys_2 env_2 ...``.
    """
    if n > 4 or r > 2:
        raise ValidationError("exact RP twirl is limited to n <= 4 and r <= 2")
    v = _copies(np.asarray(psi0, dtype=complex), n)
    X = np.outer(v, v.conj())
    if r == 1:
        return X
    dims = (d, r) * n
    Y = schur.commutant_twirl(X, dims, range(1, 2 * n, 2))
    return 0.5 * (Y + dagger(Y))


def rp_twirl_mc(psi0: np.ndarray, d: int, r: int, n: int, samples: int, seed: int, streams: int = 1) -> np.ndarray:
    """Haar Monte-Carlo estimate of :func:`rp_twirl_exact`."""
    base = np.asarray(psi0, dtype=complex).reshape(d, r)
    D = (d * r) ** n
    acc = np.zeros((D, D), dtype=complex)
    per = -(-samples // streams)
    chunk = 4096
    done = 0
    for s in range(streams):
        rng = make_rng(seed, s)
        todo = min(per, samples - done)
        while todo > 0:
            k = min(chunk, todo)
            U = haar_unitary(r, rng, size=k)
            vecs = np.einsum("ij,skj->sik", base, U).reshape(k, d * r)
            full = vecs
            for _ in range(n - 1):
                full = np.einsum("sa,sb->sab", full, vecs).reshape(k, -1)
            acc += full.T @ full.conj()
            todo -= k
            done += k
    return acc / samples


class PurifyAndClone:
    """Purify-and-clone protocol for a rank-``r`` input.

    The RP stage is emulated from the eigendecomposition of ``rho`` (its
    output is the environment Haar twirl of ``Psi_0^{(x)n}``); then excess
    copies are traced out (``m <= n``) or the Werner cloner on ``C^{dr}`` is
    applied (``m > n``).
    """

    def __init__(self, spec: RpSpec, mc_samples: int | None = None, seed: int = 0):
        if spec.D ** max(spec.m, spec.n) > 4096:
            raise ValidationError("(dr)^m exceeds 4096")
        self.spec = spec
        self.mc_samples = mc_samples
        self.seed = seed

    def rp_state(self, rho) -> np.ndarray:
        s = self.spec
        psi0 = purification(rho, s.r)
        if self.mc_samples is None:
            return rp_twirl_exact(psi0, s.d, s.r, s.n)
        return rp_twirl_mc(psi0, s.d, s.r, s.n, self.mc_samples, self.seed)

    def __call__(self, rho) -> np.ndarray:
        s = self.spec
        X = self.rp_state(rho)
        if s.m <= s.n:
            return ptrace(X, (s.D,) * s.n, range(s.m))
        return apply_cloner(X, s.n, s.m, s.D)

    def target(self, rho) -> np.ndarray:
        """Haar-averaged ``m``-copy purification target."""
        s = self.spec
        psi0 = purification(rho, s.r)
        return rp_twirl_exact(psi0, s.d, s.r, s.m)

    def system_marginals(self, out: np.ndarray) -> list[np.ndarray]:
        s = self.spec
        dims = (s.d, s.r) * s.m
        return [ptrace(out, dims, [2 * i]) for i in range(s.m)]

    def site_marginals(self, out: np.ndarray) -> list[np.ndarray]:
        s = self.spec
        return [ptrace(out, (s.D,) * s.m, [i]) for i in range(s.m)]

    def systems_only(self, out: np.ndarray) -> np.ndarray:
        s = self.spec
        return ptrace(out, (s.d, s.r) * s.m, range(0, 2 * s.m, 2))


def purify_and_clone(spec: RpSpec, mc_samples: int | None = None, seed: int = 0) -> PurifyAndClone:
    return PurifyAndClone(spec, mc_samples, seed)


def cloning_fidelities(psi: np.ndarray, n: int, m: int, D: int, channel: Channel | None = None):
    """Brute-force ``(all-site, mean one-site)`` fidelities of the cloner on ``psi``."""
    psi = np.asarray(psi, dtype=complex) / np.linalg.norm(psi)
    ch = werner_cloner(n, m, D) if channel is None else channel
    out = ch(np.outer(_copies(psi, n), _copies(psi, n).conj()))
    full = _copies(psi, m)
    f_all = float(np.real(full.conj() @ out @ full))
    f_one = np.mean([np.real(psi.conj() @ ptrace(out, (D,) * m, [i]) @ psi) for i in range(m)])
    return f_all, float(f_one)


def system_fidelities(proto: PurifyAndClone, rho) -> dict:
    """Fidelities of a purify-and-clone run: one-site system, all-site systems, purification level."""
    out = proto(rho)
    s = proto.spec
    rmat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    one = [fidelity(m_ / np.trace(m_).real, rmat) for m_ in proto.system_marginals(out)]
    sys_all = fidelity(proto.systems_only(out), _kron_power(rmat, s.m))
    res = {"one_site_system": float(np.mean(one)), "one_site_spread": float(np.ptp(one)), "all_site_system": sys_all}
    if s.m <= 4 and s.r <= 2:
        res["all_site_purification"] = fidelity(out, proto.target(rho))
    return res


def _kron_power(a, k):
    out = a
    for _ in range(k - 1):
        out = np.kron(out, a)
    return out
