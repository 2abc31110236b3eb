"""Density-matrix exponentiation: LMR partial swaps versus tomography.

Errors are measured on a data register entangled with a reference of the same
dimension and maximized over a finite probe set, which lower-bounds the
diamond distance.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import (
    DensityOperator,
    ValidationError,
    clip_to_state,
    dagger,
    haar_vector,
    herm_exp,
    make_rng,
    ptrace,
    swap_operator,
    trace_distance,
    trace_norm,
)


@dataclass(frozen=True)
class DmeSpec:
    T: float
    n: int
    d: int

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be positive")
        if self.vacuous:
            warnings.warn("T is a multiple of 2 pi; the lower bound is vacuous", stacklevel=2)

    @property
    def vacuous(self) -> bool:
        return _vacuous(self.T)


def _vacuous(T: float) -> bool:
    return abs(math.sin(T / 2)) < 1e-12


def _mat(x):
    return x.matrix if isinstance(x, DensityOperator) else np.asarray(x, dtype=complex)


# ---------------------------------------------------------------- LMR

def lmr_step(sigma, rho, delta: float) -> DensityOperator:
    """``Tr_2[e^{-iS delta} (sigma (x) rho) e^{iS delta}]`` with ``S`` swapping data and copy.

    ``sigma`` may carry extra (reference) factors after the data register,
    declared through its ``dims``.
    """
    s = sigma if isinstance(sigma, DensityOperator) else DensityOperator(sigma)
    r = _mat(rho)
    d = r.shape[0]
    if s.dims[0] != d:
        raise ValidationError("data register and rho have different dimensions")
    R = s.dim // d
    # order: data, ref, copy ; swap acts on data and copy
    big = np.kron(s.matrix, r)
    Sw = swap_operator(d)
    Sfull = _embed_swap(Sw, d, R)
    U = herm_exp(Sfull, delta)
    out = U @ big @ dagger(U)
    out = ptrace(out, (d, R, d), [0, 1])
    return DensityOperator(0.5 * (out + dagger(out)), s.dims)


def _embed_swap(Sw, d, R):
    # swap between factor 0 and factor 2 of (d, R, d)
    S4 = Sw.reshape(d, d, d, d)
    full = np.einsum("acbd,xy->axcbyd", S4, np.eye(R))
    return full.reshape(d * R * d, d * R * d)


def lmr_step_fast(sigma: np.ndarray, rho: np.ndarray, delta: float, R: int) -> np.ndarray:
    """Closed form of :func:`lmr_step`: ``c^2 s + s^2 (rho (x) Tr_D s) - i c s [rho (x) I, s]``."""
    d = rho.shape[0]
    c, sn = math.cos(delta), math.sin(delta)
    red = ptrace(sigma, (d, R), [1])
    big = np.kron(rho, np.eye(R))
    return c * c * sigma + sn * sn * np.kron(rho, red) - 1j * c * sn * (big @ sigma - sigma @ big)


def lmr_protocol(sigma, rho, T: float, n: int) -> DensityOperator:
    """``n`` partial-swap steps with ``delta = T/n``."""
    s = sigma if isinstance(sigma, DensityOperator) else DensityOperator(sigma)
    r = _mat(rho)
    d = r.shape[0]
    R = s.dim // d
    x = s.matrix.copy()
    delta = T / n
    for _ in range(n):
        x = lmr_step_fast(x, r, delta, R)
    x = 0.5 * (x + dagger(x))
    return DensityOperator(x / np.trace(x).real, s.dims)


def target_state(sigma, rho, T: float) -> np.ndarray:
    s = sigma if isinstance(sigma, DensityOperator) else DensityOperator(sigma)
    r = _mat(rho)
    U = np.kron(herm_exp(r, T), np.eye(s.dim // r.shape[0]))
    return U @ s.matrix @ dagger(U)


def probe_states(rho, count: int = 8, seed: int = 0) -> list:
    """Data-reference probes on ``C^d (x) C^d``.

    The set holds the maximally entangled state, a sweep of states on the
    span of the two leading eigenvectors of ``rho`` (entangled and product),
    and ``count`` Haar-random pure states.
    """
    r = _mat(rho)
    d = r.shape[0]
    w, v = np.linalg.eigh(r)
    v = v[:, np.argsort(w)[::-1]]
    e = np.eye(d)
    vecs = [np.eye(d).reshape(-1) / math.sqrt(d)]
    # amplitude/phase sweep over the leading eigen-span; the pure-state
    # dynamics never leave it, so these probes carry no d dependence
    for t in np.linspace(0.15, 0.5, 6) * math.pi:
        for ph in (1, 1j, -1, -1j):
            a, b = math.cos(t), ph * math.sin(t)
            vecs.append(a * np.kron(v[:, 0], e[0]) + b * np.kron(v[:, 1], e[1]))
            vecs.append(np.kron(a * v[:, 0] + b * v[:, 1], e[0]))
    rng = make_rng(seed)
    vecs += list(haar_vector(d * d, rng, size=count)) if count else []
    out = []
    for x in vecs:
        x = np.asarray(x, dtype=complex)
        x /= np.linalg.norm(x)
        out.append(DensityOperator(np.outer(x, x.conj()), (d, d)))
    return out


def dme_error(rho, T: float, n: int, probes: int = 8, seed: int = 0) -> float:
    """Max trace distance of LMR output to the ideal evolution over the probes.

    A lower bound on the diamond distance.
    """
    r = _mat(rho)
    d = r.shape[0]
    states = probe_states(r, probes, seed)
    x = np.stack([s.matrix for s in states])
    c, sn = math.cos(T / n), math.sin(T / n)
    big = np.kron(r, np.eye(d))
    for _ in range(n):
        red = _trace_data(x, d)
        x = c * c * x + sn * sn * np.einsum("ab,sjk->sajbk", r, red).reshape(x.shape) \
            - 1j * c * sn * (big @ x - x @ big)
    U = np.kron(herm_exp(r, T), np.eye(d))
    best = 0.0
    for out, s in zip(x, states):
        out = 0.5 * (out + dagger(out))
        best = max(best, trace_distance(out / np.trace(out).real, U @ s.matrix @ dagger(U)))
    return best


def _trace_data(x, d):
    return np.einsum("sajak->sjk", x.reshape(len(x), d, d, d, d))


# ---------------------------------------------------------------- tomography baseline

def gell_mann(d: int) -> list[np.ndarray]:
    """Generalized Gell-Mann matrices, normalized as ``Tr(G_a G_b) = 2 delta_ab``."""
    mats = []
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1
            a = np.zeros((d, d), dtype=complex)
            a[j, k], a[k, j] = -1j, 1j
            mats += [s, a]
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        mats.append(np.diag(diag * math.sqrt(2 / (l * (l + 1)))).astype(complex))
    return mats


def tomography_estimate(rho, n: int, rng) -> np.ndarray:
    """Single-copy Gell-Mann tomography with copies split evenly, then clipping."""
    r = _mat(rho)
    d = r.shape[0]
    G = gell_mann(d)
    per = n // len(G)
    if n < d * d or per < 1:
        raise ValidationError(f"need at least d^2 = {d * d} copies, got {n}")
    est = np.eye(d, dtype=complex) / d
    for g in G:
        vals, vecs = np.linalg.eigh(g)
        probs = np.clip(np.real(np.einsum("ij,ik,kj->j", vecs.conj(), r, vecs)), 0, None)
        counts = rng.multinomial(per, probs / probs.sum())
        est += 0.5 * (counts @ vals / per) * g
    return clip_to_state(est)


def incoherent_dme(rho, n: int, T: float, data_sigma, rng=None) -> DensityOperator:
    """Estimate ``rho`` from ``n`` copies, then apply ``e^{-i rho_hat T}`` to the data half."""
    rng = make_rng(0) if rng is None else rng
    est = tomography_estimate(rho, n, rng)
    return DensityOperator(target_state(data_sigma, est, T), _dims(data_sigma))


def _dims(s):
    return s.dims if isinstance(s, DensityOperator) else ()


def incoherent_dme_error(rho, T: float, n: int, probes: int = 8, seed: int = 0, reps: int = 10) -> tuple:
    """Mean and stderr over tomography runs of the max-over-probes error."""
    ps = probe_states(rho, probes, seed)
    targets = [target_state(s, rho, T) for s in ps]
    errs = []
    for rep in range(reps):
        rng = make_rng(seed, 1, rep)
        est = tomography_estimate(rho, n, rng)
        errs.append(max(trace_distance(target_state(s, est, T), t) for s, t in zip(ps, targets)))
    errs = np.array(errs)
    return float(errs.mean()), float(errs.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0


# ---------------------------------------------------------------- lower-bound apparatus

@dataclass(frozen=True)
class ThetaPoint:
    """Real coordinates of length ``d-1`` with ``||theta|| <= 1``."""

    theta: np.ndarray
    r0: float | None = None

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, float))
        if th @ th > 1 + 1e-12:
            raise ValidationError("||theta|| must be at most 1")
        object.__setattr__(self, "theta", th)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))

    @property
    def admissible(self) -> bool:
        return self.r0 is not None and self.norm <= self.r0 + 1e-12


def theta_vector(theta) -> np.ndarray:
    if isinstance(theta, ThetaPoint):
        theta = theta.theta
    th = np.atleast_1d(np.asarray(theta, float))
    s = float(th @ th)
    if s > 1 + 1e-12:
        raise ValidationError("||theta|| must be at most 1")
    return np.concatenate([[math.sqrt(max(0.0, 1 - s))], th]).astype(complex)


def theta_state(theta) -> DensityOperator:
    return DensityOperator.from_vector(theta_vector(theta))


def ab_coefficients(theta, T: float):
    th = np.asarray(theta, float)
    s = th @ th
    c = np.exp(-1j * T) - 1
    return 1 + c * (1 - s), c * np.sqrt(1 - s)


def gamma_vector(theta, T: float) -> np.ndarray:
    """``A|0> + B sum_j theta_j |j>``; also accepts a stack of thetas."""
    th = np.asarray(theta.theta if isinstance(theta, ThetaPoint) else theta, float)
    s = np.sum(th * th, axis=-1)
    c = np.exp(-1j * T) - 1
    A = 1 + c * (1 - s)
    B = c * np.sqrt(np.clip(1 - s, 0, None))
    return np.concatenate([np.asarray(A)[..., None], B[..., None] * th], axis=-1)


def gamma_state(theta, T: float, method: str = "closed") -> DensityOperator:
    """``e^{-iT vartheta}|0><0|e^{iT vartheta}`` by the closed form or by ``herm_exp``."""
    if method == "closed":
        return DensityOperator.from_vector(gamma_vector(theta, T))
    v = theta_vector(theta)
    U = herm_exp(np.outer(v, v.conj()), T)
    return DensityOperator.from_vector(U[:, 0])


def a_T(T: float) -> float:
    return 0.25 * math.sin(T / 2) ** 2


def _g_and_deriv(s: np.ndarray, T: float):
    # G(theta) = g(|theta|^2) theta with g = B/A; derivative in s = |theta|^2
    c = np.exp(-1j * T) - 1
    q = np.sqrt(np.clip(1 - s, 1e-300, None))
    A = 1 + c * q * q
    g = c * q / A
    dg = -c * (1 - c * q * q) / (2 * q * A * A)
    return g, dg, A


def embedding_jacobian(zeta, T: float) -> np.ndarray:
    """``grad G(zeta) = g I + 2 g'(|zeta|^2) zeta zeta^T``."""
    z = np.asarray(zeta, float)
    g, dg, _ = _g_and_deriv(np.array(z @ z), T)
    return g * np.eye(len(z)) + 2 * dg * np.outer(z, z)


def embedding_conditions(radii: np.ndarray, T: float):
    """``(||G||, ||E||_inf, |A|)`` as functions of the radius.

    ``grad G - g(0) I = (g - g0) I + 2 g' zeta zeta^T`` is normal with
    eigenvalues ``g - g0`` and ``g - g0 + 2 g' |zeta|^2``, so both norms depend
    on ``zeta`` only through its length.
    """
    s = np.asarray(radii, float) ** 2
    g, dg, A = _g_and_deriv(s, T)
    g0 = 1 - np.exp(1j * T)
    Gn = np.abs(g) * np.sqrt(s)
    En = np.maximum(np.abs(g - g0), np.abs(g - g0 + 2 * dg * s))
    return Gn, En, np.abs(A)


def compute_r0(T: float, step: float = 1e-3, samples: int = 20001) -> float:
    """Largest grid radius on which both embedding conditions hold, minus one step."""
    if _vacuous(T):
        raise ValidationError("T is a multiple of 2 pi: no admissible radius")
    radii = np.linspace(0.0, 1.0, samples)
    Gn, En, An = embedding_conditions(radii, T)
    bound = 0.5 * abs(1 - np.exp(1j * T))
    ok = (Gn <= 0.5) & (En <= bound) & (An > 1e-12)
    bad = np.nonzero(~ok)[0]
    limit = radii[bad[0]] if bad.size else 1.0 + step
    # grid radii strictly below the first failing sample
    r = math.floor((limit - 1e-15) / step) * step
    if limit <= r:
        r -= step
    r0 = round(r - step, 12)
    if r0 <= 0:
        raise ValidationError(f"no admissible radius for T={T}: first failure at {limit:.3e}")
    return min(r0, 1.0)


def embedding_bound_check(theta, eta, T: float, r0: float):
    """``(1 - F(gamma_theta, gamma_eta), a_T ||theta - eta||^2, holds)``."""
    th, et = np.asarray(theta, float), np.asarray(eta, float)
    if np.linalg.norm(th) > r0 + 1e-12 or np.linalg.norm(et) > r0 + 1e-12:
        raise ValidationError("theta or eta lies outside the admissible radius")
    g1, g2 = gamma_vector(th, T), gamma_vector(et, T)
    lhs = 1 - abs(np.vdot(g1, g2)) ** 2
    rhs = a_T(T) * float((th - et) @ (th - et))
    return float(lhs), rhs, bool(lhs >= rhs - 1e-12)


def embedding_violations(T: float, d: int, pairs: int, seed: int, r0: float | None = None) -> dict:
    """Sample admissible pairs (half with small separations) and count violations."""
    r0 = compute_r0(T) if r0 is None else r0
    m = d - 1
    rng = make_rng(seed)

    def ball(size):
        x = rng.normal(size=(size, m))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x * (r0 * rng.random(size) ** (1 / m))[:, None]

    th = ball(pairs)
    et = ball(pairs)
    near = pairs // 2
    step = rng.normal(size=(near, m)) * r0 * 10.0 ** rng.uniform(-6, -1, size=(near, 1))
    cand = th[:near] + step
    norms = np.linalg.norm(cand, axis=1)
    cand[norms > r0] *= (r0 / norms[norms > r0])[:, None]
    et[:near] = cand
    g1, g2 = gamma_vector(th, T), gamma_vector(et, T)
    lhs = 1 - np.abs(np.einsum("si,si->s", g1.conj(), g2)) ** 2
    rhs = a_T(T) * np.sum((th - et) ** 2, axis=1)
    viol = int(np.sum(lhs < rhs - 1e-12))
    return {"T": T, "d": d, "r0": r0, "pairs": pairs, "violations": viol,
            "min_ratio": float(np.min(np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1), np.inf)))}


@dataclass(frozen=True)
class LowerBoundReport:
    value: float
    valid: bool
    c_T: float
    eps_T: float


def incoherent_lower_bound(eps: float, d: int, T: float) -> LowerBoundReport:
    """``c_T d / eps`` with ``c_T = sin^2(T/2)/8192``; valid for ``eps <= a_T r0^2 / 1024``."""
    if _vacuous(T):
        return LowerBoundReport(0.0, False, 0.0, 0.0)
    c = math.sin(T / 2) ** 2 / 8192
    eps_T = a_T(T) * compute_r0(T) ** 2 / 1024
    return LowerBoundReport(c * d / eps, 0 < eps <= eps_T, c, eps_T)


def helstrom_error(rho0, rho1) -> float:
    """Minimum error probability for equiprobable binary discrimination."""
    return 0.5 * (1 - trace_distance(_mat(rho0), _mat(rho1)))


def hypercube_neighbors(alpha: float, d: int, tau=None, j: int = 0):
    """Vectors ``vartheta_tau`` and its neighbor with coordinate ``j`` flipped."""
    m = d - 1
    tau = np.ones(m) if tau is None else np.asarray(tau, float)
    flipped = tau.copy()
    flipped[j] *= -1
    return theta_vector(alpha * tau), theta_vector(alpha * flipped)


def hypercube_helstrom(n: int, alpha: float, d: int, brute: bool = False) -> dict:
    """Helstrom error between ``n`` copies of neighboring hypercube states.

    Uses the pure-state identity ``D = sqrt(1 - |<a|b>|^{2n})``; with
    ``brute`` the ``n``-fold states are built explicitly.
    """
    a, b = hypercube_neighbors(alpha, d)
    overlap = abs(np.vdot(a, b)) ** (2 * n)
    err = 0.5 * (1 - math.sqrt(max(0.0, 1 - overlap)))
    out = {"overlap_n": overlap, "formula_overlap": (1 - 2 * alpha ** 2) ** (2 * n), "error": err,
           "chain_floor": math.exp(-8 * n * alpha ** 2)}
    if brute:
        A, B = a, b
        for _ in range(n - 1):
            A, B = np.kron(A, a), np.kron(B, b)
        out["error_brute"] = helstrom_error(np.outer(A, A.conj()), np.outer(B, B.conj()))
    return out
