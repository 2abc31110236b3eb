"""Dense linear algebra for states and channels.

Conventions
-----------
* Choi matrices put the input first: ``J = sum_ij |i><j| (x) T(|i><j|)``, so
  ``Tr_out J = I_in``.
* Fidelity is the squared Uhlmann fidelity; for pure states it reduces to the
  squared overlap.
* Random numbers come from ``numpy.random.Generator`` over a Philox stream
  (counter based), derived from a 64-bit master seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

ATOL = 1e-10
TP_ATOL = 1e-9


class ValidationError(ValueError):
    """Raised when an object violates its mathematical invariants."""


# ---------------------------------------------------------------- randomness

def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional stream key.

    The same ``(seed, stream)`` pair always gives the same draws, which is what
    lets Monte-Carlo loops be split over workers without changing results.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(0 if rng is None else int(rng))


# ---------------------------------------------------------------- helpers

def _as_matrix(x) -> np.ndarray:
    if isinstance(x, DensityOperator):
        return x.matrix
    return np.asarray(x, dtype=complex)


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def is_hermitian(a: np.ndarray, atol: float = ATOL) -> bool:
    return bool(np.max(np.abs(a - dagger(a)), initial=0.0) <= atol)


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats)


def ket(index: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[index] = 1.0
    return v


def proj(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).reshape(-1)
    return np.outer(v, v.conj())


def trace_norm(a: np.ndarray) -> float:
    """Schatten-1 norm. Uses eigenvalues when ``a`` is Hermitian."""
    a = np.asarray(a)
    if is_hermitian(a, 1e-12):
        return float(np.abs(np.linalg.eigvalsh(0.5 * (a + dagger(a)))).sum())
    return float(np.linalg.svd(a, compute_uv=False).sum())


# ---------------------------------------------------------------- states

@dataclass(frozen=True, eq=False)
class DensityOperator:
    """PSD unit-trace matrix with a declared tensor factorization ``dims``."""

    matrix: np.ndarray
    dims: tuple = ()

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError(f"density operator must be square, got {mat.shape}")
        D = mat.shape[0]
        dims = tuple(int(x) for x in self.dims) if self.dims else (D,)
        if int(np.prod(dims)) != D or any(x < 1 for x in dims):
            raise ValidationError(f"dims {dims} do not factor dimension {D}")
        if not is_hermitian(mat):
            raise ValidationError("matrix is not Hermitian within 1e-10")
        mat = 0.5 * (mat + mat.conj().T)
        if abs(np.trace(mat).real - 1.0) > ATOL:
            raise ValidationError(f"trace {np.trace(mat).real!r} differs from 1")
        w, v = np.linalg.eigh(mat)
        if w[0] < -ATOL:
            raise ValidationError(f"eigenvalue {w[0]:.3e} below -1e-10")
        if w[0] < 0:
            w = np.clip(w, 0.0, None)
            mat = (v * w) @ v.conj().T
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "dims", dims)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigh(self):
        return np.linalg.eigh(self.matrix)

    def is_pure(self, atol: float = 1e-9) -> bool:
        return abs(np.trace(self.matrix @ self.matrix).real - 1.0) < atol

    def tensor(self, other: "DensityOperator") -> "DensityOperator":
        return DensityOperator(np.kron(self.matrix, other.matrix), self.dims + other.dims)

    def power(self, n: int) -> "DensityOperator":
        return DensityOperator(kron_all([self.matrix] * n), self.dims * n)

    @classmethod
    def from_vector(cls, psi, dims=()) -> "DensityOperator":
        v = np.asarray(psi, dtype=complex).reshape(-1)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), dims)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def maximally_mixed(d: int) -> DensityOperator:
    return DensityOperator(np.eye(d) / d)


def _require_same_shape(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch {a.shape} vs {b.shape}")


def _rank_one_vector(a: np.ndarray, atol: float = 1e-12):
    """Return ``psi`` if ``a`` is a rank one projector, else ``None``."""
    w, v = np.linalg.eigh(a)
    if w[-1] > 1 - atol and np.all(np.abs(w[:-1]) < atol):
        return v[:, -1]
    return None


def fidelity(rho, sigma) -> float:
    """Squared Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    a, b = _as_matrix(rho), _as_matrix(sigma)
    _require_same_shape(a, b)
    for x in (a, b):
        if np.linalg.eigvalsh(0.5 * (x + dagger(x)))[0] < -ATOL:
            raise ValidationError("fidelity argument is not PSD")
    psi = _rank_one_vector(a)
    if psi is not None:
        return float(np.clip(np.real(psi.conj() @ b @ psi), 0.0, 1.0))
    phi = _rank_one_vector(b)
    if phi is not None:
        return float(np.clip(np.real(phi.conj() @ a @ phi), 0.0, 1.0))
    w, v = np.linalg.eigh(a)
    sq = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    inner = np.linalg.eigvalsh(sq @ b @ sq)
    return float(np.clip(np.sqrt(np.clip(inner, 0, None)).sum() ** 2, 0.0, 1.0))


def pure_fidelity(psi, sigma) -> float:
    """``<psi|sigma|psi>`` for a state vector ``psi``."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return float(np.real(psi.conj() @ _as_matrix(sigma) @ psi))


def trace_distance(rho, sigma) -> float:
    a, b = _as_matrix(rho), _as_matrix(sigma)
    _require_same_shape(a, b)
    return 0.5 * trace_norm(a - b)


# ---------------------------------------------------------------- tensor ops

def ptrace(mat: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of a raw matrix keeping the subsystems in ``keep`` (in order)."""
    dims = tuple(dims)
    keep = sorted(set(keep))
    k = len(dims)
    if any(i < 0 or i >= k for i in keep):
        raise ValidationError(f"invalid subsystem indices {keep} for {k} factors")
    t = np.asarray(mat).reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    row = list(letters[:k])
    col = [letters[k + i] if i in keep else row[i] for i in range(k)]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    res = np.einsum("".join(row) + "".join(col) + "->" + "".join(out), t)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return res.reshape(dk, dk)


def partial_trace(rho: DensityOperator, keep) -> DensityOperator:
    keep = sorted(set(keep))
    if not keep and rho.dims:
        # tracing everything leaves the scalar 1
        return DensityOperator(np.ones((1, 1)), (1,))
    if keep == list(range(len(rho.dims))):
        return rho
    out = ptrace(rho.matrix, rho.dims, keep)
    return DensityOperator(out, tuple(rho.dims[i] for i in keep))


def permute_subsystems(mat: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors so that new factor ``j`` is old factor ``perm[j]``.

    Works for square matrices on the full space; the same permutation is
    applied to row and column indices.
    """
    dims = tuple(dims)
    k = len(dims)
    perm = list(perm)
    t = np.asarray(mat).reshape(dims + dims)
    t = t.transpose(perm + [k + p for p in perm])
    D = int(np.prod(dims))
    return t.reshape(D, D)


def permutation_matrix(perm: Sequence[int], d: int) -> np.ndarray:
    """Operator ``U_pi`` on ``(C^d)^{(x)n}`` sending factor ``i`` to slot ``perm[i]``."""
    n = len(perm)
    D = d ** n
    multi = np.array(np.unravel_index(np.arange(D), (d,) * n))
    out = np.empty_like(multi)
    out[list(perm)] = multi  # output digit perm[i] is input digit i
    dest = np.ravel_multi_index(tuple(out), (d,) * n)
    U = np.zeros((D, D))
    U[dest, np.arange(D)] = 1.0
    return U


def swap_operator(d: int) -> np.ndarray:
    return permutation_matrix([1, 0], d)


def partial_transpose(mat: np.ndarray, dims: Sequence[int], sys: Sequence[int]) -> np.ndarray:
    dims = tuple(dims)
    k = len(dims)
    t = np.asarray(mat).reshape(dims + dims)
    order = list(range(2 * k))
    for s in sys:
        order[s], order[k + s] = order[k + s], order[s]
    D = int(np.prod(dims))
    return t.transpose(order).reshape(D, D)


# ---------------------------------------------------------------- channels

@dataclass(eq=False)
class Channel:
    """CPTP map held as a stack of Kraus operators of shape ``(K, d_out, d_in)``."""

    kraus: np.ndarray
    dims_in: tuple = ()
    dims_out: tuple = ()
    _choi: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        ks = np.asarray(self.kraus, dtype=complex)
        if ks.ndim == 2:
            ks = ks[None]
        if ks.ndim != 3 or ks.shape[0] == 0:
            raise ValidationError("kraus family must be a nonempty stack of matrices")
        self.kraus = ks
        d_out, d_in = ks.shape[1:]
        self.dims_in = tuple(self.dims_in) or (d_in,)
        self.dims_out = tuple(self.dims_out) or (d_out,)
        if int(np.prod(self.dims_in)) != d_in or int(np.prod(self.dims_out)) != d_out:
            raise ValidationError("declared dims do not match Kraus shape")
        flat = ks.reshape(-1, d_in)
        gram = flat.conj().T @ flat
        err = np.max(np.abs(gram - np.eye(d_in)))
        if err > TP_ATOL:
            raise ValidationError(f"Kraus family is not trace preserving (error {err:.2e})")

    @property
    def d_in(self) -> int:
        return self.kraus.shape[2]

    @property
    def d_out(self) -> int:
        return self.kraus.shape[1]

    def __call__(self, x) -> np.ndarray:
        """Raw action on any (not necessarily Hermitian) matrix."""
        a = _as_matrix(x)
        if a.shape != (self.d_in, self.d_in):
            raise ValidationError(f"input shape {a.shape} does not match d_in={self.d_in}")
        ks = self.kraus
        if is_hermitian(a, 1e-13) and ks.shape[0] > 1:
            # low-rank inputs are common; go through the eigenvectors
            w, v = np.linalg.eigh(0.5 * (a + dagger(a)))
            keep = np.abs(w) > 1e-14 * max(1.0, np.abs(w).max())
            w, v = w[keep], v[:, keep]
            y = ks @ v  # (K, d_out, r)
            y2 = np.transpose(y, (1, 0, 2)).reshape(self.d_out, -1)
            ww = np.tile(w, ks.shape[0])
            return (y2 * ww) @ y2.conj().T
        return np.einsum("kab,bc,kdc->ad", ks, a, ks.conj())

    def choi(self) -> np.ndarray:
        if self._choi is None:
            self._choi = kraus_to_choi(self)
        return self._choi

    def compose(self, first: "Channel") -> "Channel":
        """``self o first`` (apply ``first`` then ``self``)."""
        ks = np.einsum("iab,jbc->ijac", self.kraus, first.kraus)
        ks = ks.reshape(-1, self.d_out, first.d_in)
        return Channel(ks, first.dims_in, self.dims_out)

    def tensor(self, other: "Channel") -> "Channel":
        ks = np.einsum("iab,jcd->ijacbd", self.kraus, other.kraus)
        ks = ks.reshape(-1, self.d_out * other.d_out, self.d_in * other.d_in)
        return Channel(ks, self.dims_in + other.dims_in, self.dims_out + other.dims_out)

    def compressed(self, tol: float = 1e-12) -> "Channel":
        """Minimal Kraus family obtained from the Choi eigendecomposition."""
        return choi_to_kraus(self.choi(), self.dims_in, self.dims_out, tol=tol)


def apply_channel(ch: Channel, rho) -> DensityOperator:
    """Apply ``ch`` and return a validated :class:`DensityOperator`."""
    mat = _as_matrix(rho)
    if mat.shape[0] != ch.d_in:
        raise ValidationError(f"channel expects dimension {ch.d_in}, got {mat.shape[0]}")
    out = ch(mat)
    return DensityOperator(0.5 * (out + dagger(out)), ch.dims_out)


def kraus_to_choi(ch: Channel) -> np.ndarray:
    # column k of vecs is (I (x) K_k)|Omega>, entry [i*d_out + o] = K_k[o, i]
    vecs = np.transpose(ch.kraus, (0, 2, 1)).reshape(ch.kraus.shape[0], -1)
    return vecs.T @ vecs.conj()


def choi_to_kraus(choi, dims_in=None, dims_out=None, tol: float = 1e-12) -> Channel:
    """Kraus form of a Choi matrix (input first); validates PSD and marginal."""
    J = np.asarray(choi, dtype=complex)
    if dims_in is None or dims_out is None:
        raise ValidationError("choi_to_kraus needs dims_in and dims_out")
    dims_in, dims_out = tuple(dims_in), tuple(dims_out)
    d_in, d_out = int(np.prod(dims_in)), int(np.prod(dims_out))
    if J.shape != (d_in * d_out, d_in * d_out):
        raise ValidationError("Choi shape does not match dims")
    if not is_hermitian(J, TP_ATOL):
        raise ValidationError("Choi matrix is not Hermitian")
    marg = ptrace(J, (d_in, d_out), [0])
    if np.max(np.abs(marg - np.eye(d_in))) > TP_ATOL:
        raise ValidationError("Choi input marginal is not the identity")
    w, v = np.linalg.eigh(0.5 * (J + dagger(J)))
    if w[0] < -TP_ATOL:
        raise ValidationError(f"Choi matrix is not PSD (eigenvalue {w[0]:.2e})")
    keep = w > tol * max(1.0, w[-1])
    vecs = v[:, keep] * np.sqrt(w[keep])
    ks = vecs.T.reshape(-1, d_in, d_out).transpose(0, 2, 1)
    return Channel(ks, dims_in, dims_out, _choi=J)


def choi_apply(choi: np.ndarray, x: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """``T(X) = Tr_in[(X^T (x) I) J]`` for a Choi matrix ``J`` (input first)."""
    J = np.asarray(choi).reshape(d_in, d_out, d_in, d_out)
    return np.einsum("ab,aobp->op", np.asarray(x), J)


def identity_channel(d: int) -> Channel:
    return Channel(np.eye(d)[None])


def replace_channel(sigma, d_in: int) -> Channel:
    """Trace-and-replace with the fixed state ``sigma``."""
    s = _as_matrix(sigma)
    w, v = np.linalg.eigh(s)
    ks = []
    for lam, vec in zip(w, v.T):
        if lam <= 1e-15:
            continue
        for i in range(d_in):
            ks.append(np.sqrt(lam) * np.outer(vec, ket(i, d_in).conj()))
    return Channel(np.array(ks))


def depolarizing_channel(d: int, p: float) -> Channel:
    """``X -> (1-p) X + p Tr(X) I/d`` via the Weyl operators."""
    X = np.roll(np.eye(d), 1, axis=0)
    Z = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    ks = [np.sqrt(1 - p + p / d ** 2) * np.eye(d)]
    for a in range(d):
        for b in range(d):
            if a == 0 and b == 0:
                continue
            ks.append(np.sqrt(p) / d * np.linalg.matrix_power(X, a) @ np.linalg.matrix_power(Z, b))
    return Channel(np.array(ks))


def dephasing_channel(d: int) -> Channel:
    return Channel(np.array([np.diag(ket(i, d)) for i in range(d)]))


def mix_channels(channels: Sequence[Channel], weights: Sequence[float]) -> Channel:
    ks = np.concatenate([np.sqrt(w) * c.kraus for c, w in zip(channels, weights) if w > 0])
    return Channel(ks, channels[0].dims_in, channels[0].dims_out)


def random_channel(d_in: int, d_out: int, n_kraus: int, rng) -> Channel:
    """Random channel from an isometry of ``C^d_in`` into ``C^{d_out * n_kraus}``."""
    if n_kraus * d_out < d_in:
        raise ValidationError("need n_kraus * d_out >= d_in for an isometry")
    rng = as_rng(rng)
    g = rng.normal(size=(n_kraus * d_out, d_in)) + 1j * rng.normal(size=(n_kraus * d_out, d_in))
    q, _ = np.linalg.qr(g)
    return Channel(q.reshape(n_kraus, d_out, d_in))


# ---------------------------------------------------------------- Haar and spectra

def haar_unitary(d: int, rng=None, size: int | None = None) -> np.ndarray:
    """Haar unitary via QR of a complex Ginibre matrix with the phase fix.

    With ``size`` given, returns a stack of shape ``(size, d, d)``.
    """
    if d < 1:
        raise ValidationError("d must be positive")
    rng = as_rng(rng)
    shape = (d, d) if size is None else (size, d, d)
    z = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    ph = diag / np.abs(diag)
    return q * ph[..., None, :]


def haar_vector(d: int, rng=None, size: int | None = None) -> np.ndarray:
    rng = as_rng(rng)
    shape = (d,) if size is None else (size, d)
    z = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def haar_pure_state(d: int, rng=None) -> DensityOperator:
    return DensityOperator.from_vector(haar_vector(d, rng))


def random_mixed_state(d: int, rng=None, rank: int | None = None) -> DensityOperator:
    """Hilbert-Schmidt (``rank = d``) or induced-measure random state."""
    rng = as_rng(rng)
    k = d if rank is None else rank
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    r = g @ g.conj().T
    return DensityOperator(r / np.trace(r).real)


def state_with_spectrum(p, U=None) -> DensityOperator:
    p = np.asarray(p, dtype=float)
    if np.any(np.diff(p) > 1e-12):
        raise ValidationError("spectrum must be sorted in descending order")
    if np.any(p < -ATOL) or abs(p.sum() - 1) > ATOL:
        raise ValidationError("spectrum must be a probability vector")
    U = np.eye(len(p)) if U is None else np.asarray(U)
    return DensityOperator((U * p) @ U.conj().T)


def herm_exp(H, t: float) -> np.ndarray:
    """``exp(-i H t)`` by eigendecomposition of the Hermitian ``H``."""
    H = _as_matrix(H)
    if not is_hermitian(H, 1e-9):
        raise ValidationError("herm_exp needs a Hermitian matrix")
    w, v = np.linalg.eigh(0.5 * (H + dagger(H)))
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def conjugate(U: np.ndarray, x) -> np.ndarray:
    return U @ _as_matrix(x) @ U.conj().T


def clip_to_state(mat: np.ndarray) -> np.ndarray:
    """Nearest-in-spectrum density matrix: drop negative eigenvalues, renormalize."""
    h = 0.5 * (mat + dagger(mat))
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return np.eye(len(w)) / len(w)
    w = w / w.sum()
    return (v * w) @ v.conj().T
