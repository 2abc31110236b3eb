"""Risk calculus for coherent inference protocols.

A task draws a single-copy state ``sigma``; the protocol sees ``sigma^{(x)n}``
and should output ``gamma(sigma)^{(x)m}``. Risks are Monte-Carlo averages (or
maxima over a candidate set) of a loss between target and output.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial, sqrt
from typing import Callable, Sequence

import numpy as np

from . import schur
from .numerics import (
    Channel,
    DensityOperator,
    ValidationError,
    choi_to_kraus,
    dagger,
    fidelity,
    haar_unitary,
    haar_vector,
    kron_all,
    make_rng,
    partial_transpose,
    permutation_matrix,
    ptrace,
    trace_distance,
    trace_norm,
)


# ---------------------------------------------------------------- losses

@dataclass(frozen=True)
class Loss:
    name: str
    fn: Callable
    lipschitz: float | None = None  # w.r.t. trace distance, when known

    def __call__(self, target, output) -> float:
        return float(self.fn(target, output))


def _bures_sq(a, b):
    f = fidelity(a, b)
    return 2.0 * (1.0 - sqrt(f))


INFIDELITY = Loss("infidelity", lambda a, b: 1.0 - fidelity(a, b))
TRACE_DISTANCE = Loss("trace_distance", trace_distance, lipschitz=1.0)
# squared Bures distance 2(1 - sqrt F) ranges over [0, 2]
BURES = Loss("bures_sq", _bures_sq)
LOSSES = {l.name: l for l in (INFIDELITY, TRACE_DISTANCE, BURES)}


# ---------------------------------------------------------------- tasks and reports

@dataclass(frozen=True)
class CqiTask:
    """Inference task with a per-site target map.

    ``input_sampler(rng)`` returns one copy of the unknown state; the
    all-site target for ``sigma`` is ``target_map(sigma)^{(x)m}``.
    """

    input_sampler: Callable
    target_map: Callable
    loss: Loss
    n_copies: int
    m_outputs: int

    def sample(self, rng) -> DensityOperator:
        return self.input_sampler(rng)

    def protocol_input(self, sigma: DensityOperator) -> np.ndarray:
        return kron_all([sigma.matrix] * self.n_copies)

    def site_target(self, sigma: DensityOperator) -> DensityOperator:
        return self.target_map(sigma)

    def full_target(self, sigma: DensityOperator) -> DensityOperator:
        return self.site_target(sigma).power(self.m_outputs)


@dataclass(frozen=True)
class RiskReport:
    mode: str  # "average" | "worst-case"
    site: str  # "all-site" | "one-site"
    value: float
    stderr: float
    samples: int
    seed: int
    lower_bound: bool = False  # worst case over a finite candidate set


def identity_task(d: int = 2, n: int = 1, m: int = 1, loss: Loss = INFIDELITY, pure: bool = True) -> CqiTask:
    """Reproduce Haar-random states; the target is the input itself."""

    def sampler(rng):
        if pure:
            return DensityOperator.from_vector(haar_vector(d, rng))
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        r = g @ g.conj().T
        return DensityOperator(r / np.trace(r).real)

    return CqiTask(sampler, lambda s: s, loss, n, m)


def _output_state(proto: Channel, task: CqiTask, sigma: DensityOperator) -> DensityOperator:
    out = proto(task.protocol_input(sigma))
    out = 0.5 * (out + dagger(out))
    dims = proto.dims_out
    return DensityOperator(out / np.trace(out).real, dims)


def _site_dims(proto: Channel, task: CqiTask):
    m = task.m_outputs
    dims = proto.dims_out
    if len(dims) != m:
        if len(dims) == 1 and m >= 1:
            d = round(dims[0] ** (1.0 / m))
            if d ** m == dims[0]:
                return (d,) * m
        raise ValidationError(f"output dims {dims} do not split into {m} sites")
    return dims


def per_input_loss(task: CqiTask, proto: Channel, sigma: DensityOperator, site: str = "all-site") -> float:
    out = _output_state(proto, task, sigma)
    if site == "all-site":
        return task.loss(task.full_target(sigma), out)
    dims = _site_dims(proto, task)
    tgt = task.site_target(sigma)
    losses = []
    for i in range(task.m_outputs):
        marg = ptrace(out.matrix, dims, [i])
        losses.append(task.loss(tgt, DensityOperator(0.5 * (marg + dagger(marg)))))
    return float(np.mean(losses))


def _mc(task, proto, samples, seed, site, streams):
    vals = []
    per = -(-samples // streams)
    for s in range(streams):
        rng = make_rng(seed, s)
        for _ in range(min(per, samples - s * per)):
            vals.append(per_input_loss(task, proto, task.sample(rng), site))
    vals = np.array(vals)
    err = vals.std(ddof=1) / sqrt(len(vals)) if len(vals) > 1 else 0.0
    return float(vals.mean()), float(err), len(vals)


def average_risk(task: CqiTask, proto: Channel, samples: int, seed: int, streams: int = 1) -> RiskReport:
    """Monte-Carlo estimate of the average all-site risk.

    Results depend only on ``(seed, streams)``; stream ``s`` uses
    ``make_rng(seed, s)``.
    """
    if proto.d_in != task.protocol_input(task.sample(make_rng(seed, 2 ** 31))).shape[0]:
        raise ValidationError("protocol input dimension does not match the task")
    v, e, k = _mc(task, proto, samples, seed, "all-site", streams)
    return RiskReport("average", "all-site", v, e, k, seed)


def one_site_risk(task: CqiTask, proto: Channel, samples: int, seed: int, streams: int = 1) -> RiskReport:
    """Average over inputs and output sites of the single-site loss."""
    _site_dims(proto, task)
    v, e, k = _mc(task, proto, samples, seed, "one-site", streams)
    return RiskReport("average", "one-site", v, e, k, seed)


def worst_case_risk(task: CqiTask, proto: Channel, candidates, seed: int = 0, site: str = "all-site") -> RiskReport:
    """Maximum loss over a finite candidate set.

    ``candidates`` is either a sequence of states or a count of states to
    draw from the task. The value is a lower bound on the supremum.
    """
    if isinstance(candidates, int):
        rng = make_rng(seed)
        candidates = [task.sample(rng) for _ in range(candidates)]
    if not candidates:
        raise ValidationError("empty candidate set")
    vals = [per_input_loss(task, proto, s, site) for s in candidates]
    return RiskReport("worst-case", site, float(max(vals)), 0.0, len(vals), seed, lower_bound=True)


# ---------------------------------------------------------------- twirls

def _maybe_compress(ks: np.ndarray, dims_in, dims_out, limit: int = 2048) -> Channel:
    ch = Channel(ks, dims_in, dims_out)
    if ch.d_in * ch.d_out <= limit and ks.shape[0] > ch.d_in * ch.d_out:
        return ch.compressed()
    return ch


def exchange_twirl(proto: Channel, side: str = "in") -> Channel:
    """Compose ``proto`` with the uniform average over register permutations.

    ``side="in"`` symmetrizes the inputs (``T o exc``), ``"out"`` the outputs.
    """
    dims = proto.dims_in if side == "in" else proto.dims_out
    if len(set(dims)) != 1:
        raise ValidationError(f"{side} registers are not identical: {dims}")
    n, d = len(dims), dims[0]
    if n == 1:
        return proto
    Us = np.stack([permutation_matrix(p, d) for p in schur.permutations_of(n)]) / sqrt(factorial(n))
    if side == "in":
        ks = np.einsum("kab,pbc->kpac", proto.kraus, Us)
    else:
        ks = np.einsum("pab,kbc->kpac", Us, proto.kraus)
    ks = ks.reshape(-1, proto.d_out, proto.d_in)
    return _maybe_compress(ks, proto.dims_in, proto.dims_out)


def unitary_twirl(proto: Channel, exact: bool = True, samples: int = 0, seed: int = 0) -> Channel:
    """Unitary-covariant twirl of a channel ``(C^d)^n -> (C^d)^m``.

    The exact route twirls the input-partially-transposed Choi matrix with the
    commutant projector over all ``n + m`` registers (needs ``n + m <= 5``).
    The Monte-Carlo route averages conjugated Choi matrices.
    """
    dims = tuple(proto.dims_in) + tuple(proto.dims_out)
    if len(set(dims)) != 1:
        raise ValidationError("unitary twirl needs equal local dimensions")
    d = dims[0]
    n, m = len(proto.dims_in), len(proto.dims_out)
    J = proto.choi()
    if exact:
        if n + m > 5:
            raise ValidationError("exact twirl is limited to n + m <= 5")
        Jt = partial_transpose(J, dims, range(n))
        Jt = schur.commutant_twirl(Jt, dims, range(n + m))
        Jw = partial_transpose(Jt, dims, range(n))
    else:
        if samples < 1:
            raise ValidationError("Monte-Carlo twirl needs samples >= 1")
        rng = make_rng(seed)
        Jw = np.zeros_like(J)
        for U in haar_unitary(d, rng, size=samples):
            W = kron_all([U.T] * n + [U.conj().T] * m)
            Jw += W @ J @ dagger(W)
        Jw /= samples
    Jw = 0.5 * (Jw + dagger(Jw))
    return choi_to_kraus(Jw, proto.dims_in, proto.dims_out, tol=1e-11)


# ---------------------------------------------------------------- POVMs and EB channels

@dataclass(frozen=True)
class FinitePovm:
    effects: tuple

    def __post_init__(self):
        eff = tuple(np.asarray(e, dtype=complex) for e in self.effects)
        object.__setattr__(self, "effects", eff)
        total = sum(eff)
        if np.max(np.abs(total - np.eye(total.shape[0]))) > 1e-9:
            raise ValidationError("POVM effects do not sum to the identity")
        for e in eff:
            if np.linalg.eigvalsh(0.5 * (e + dagger(e)))[0] < -1e-9:
                raise ValidationError("POVM effect is not PSD")

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    def probabilities(self, rho) -> np.ndarray:
        mat = np.asarray(rho)
        return np.array([np.real(np.trace(e @ mat)) for e in self.effects])


@dataclass(frozen=True)
class ContinuousPovm:
    """Covariant POVM ``{M(U)}`` with Haar-distributed parameters ``U``."""

    d: int
    effect: Callable  # U -> matrix
    sampler: Callable | None = None  # (rng, size) -> stack of unitaries

    def sample(self, rng, size: int) -> np.ndarray:
        if self.sampler is not None:
            return self.sampler(rng, size)
        return haar_unitary(self.d, rng, size=size)

    def completeness(self, samples: int, seed: int = 0) -> np.ndarray:
        """Monte-Carlo average of ``M(U)``; should approach the identity."""
        rng = make_rng(seed)
        acc = None
        for U in self.sample(rng, samples):
            e = self.effect(U)
            acc = e if acc is None else acc + e
        return acc / samples


def computational_povm(d: int) -> FinitePovm:
    return FinitePovm(tuple(np.diag(np.eye(d)[i]) for i in range(d)))


def eb_channel(povm: FinitePovm, prep: Sequence) -> Channel:
    """Measure-and-prepare channel ``X -> sum_i Tr(M_i X) prep_i``.

    Kraus operators ``sqrt(q_ij mu_ik) |phi_ij><e_ik|`` from the spectral
    decompositions of effects and prepared states.
    """
    if not isinstance(povm, FinitePovm):
        raise ValidationError("only finite POVMs have a Kraus form")
    if len(prep) != len(povm.effects):
        raise ValidationError("need one prepared state per outcome")
    ks = []
    for M, st in zip(povm.effects, prep):
        st = st.matrix if isinstance(st, DensityOperator) else np.asarray(st)
        mu, E = np.linalg.eigh(0.5 * (M + dagger(M)))
        q, P = np.linalg.eigh(0.5 * (st + dagger(st)))
        for a in range(len(mu)):
            if mu[a] <= 1e-14:
                continue
            for b in range(len(q)):
                if q[b] <= 1e-14:
                    continue
                ks.append(sqrt(q[b] * mu[a]) * np.outer(P[:, b], E[:, a].conj()))
    return Channel(np.array(ks))


def is_ppt(choi: np.ndarray, d_in: int, d_out: int, atol: float = 1e-9) -> bool:
    """Positive partial transpose test (necessary for separability)."""
    pt = partial_transpose(choi, (d_in, d_out), [0])
    return bool(np.linalg.eigvalsh(0.5 * (pt + dagger(pt)))[0] >= -atol)


# ---------------------------------------------------------------- de Finetti

def sym_marginal_choi(d: int, m: int) -> np.ndarray:
    """Choi matrix of ``X -> Tr_{2..m}(V X V^dag)`` for ``X`` on the symmetric subspace.

    ``V`` embeds ``Sym^m(C^d)`` (type-state basis) into ``(C^d)^{(x)m}``.
    """
    V = schur.type_basis(d, m)
    Dm = V.shape[1]
    T = V.T.reshape(Dm, d, d ** (m - 1))
    J = np.einsum("aik,bjk->aibj", T, T.conj())
    return J.reshape(Dm * d, Dm * d).astype(complex)


def _mp_choi_exact(d: int, m: int) -> np.ndarray:
    # MP(X) = D_m int dpsi <psi^m|X|psi^m> psi  and  int psi^{m+1} = Pi_{m+1}/D_{m+1}
    V = schur.type_basis(d, m)
    Dm = V.shape[1]
    W = schur.type_basis(d, m + 1)
    VO = np.einsum("xa,yo->xyao", V, np.eye(d)).reshape(d ** (m + 1), Dm * d)
    G = (VO.T @ W) @ (W.T @ VO)  # G[(b,o),(a,o')] = <v_b o|Pi|v_a o'>
    G = G.reshape(Dm, d, Dm, d)
    M = np.einsum("boap->aobp", G).reshape(Dm * d, Dm * d)
    return (Dm / schur.multiset_dim(d, m + 1)) * M.astype(complex)


def _mp_choi_mc(d: int, m: int, samples: int, seed: int) -> np.ndarray:
    Dm = schur.multiset_dim(d, m)
    V = schur.type_basis(d, m)
    rng = make_rng(seed)
    psi = haar_vector(d, rng, size=samples)
    # coefficients <v_a|psi^m> via the full product state (d^m stays small here)
    prod = psi
    for _ in range(m - 1):
        prod = np.einsum("si,sj->sij", prod, psi).reshape(samples, -1)
    u = prod @ V  # (S, Dm)
    ub = u.conj()
    J = np.einsum("sa,sb,so,sp->aobp", ub, ub.conj(), psi, psi.conj()) / samples
    return Dm * J.reshape(Dm * d, Dm * d)


def definetti_mp_choi(d: int, m: int, samples: int | None = None, seed: int = 0) -> np.ndarray:
    """Choi matrix of the covariant measure-and-prepare channel on ``Sym^m(C^d)``.

    POVM density ``D_m psi^{(x)m}`` followed by re-preparation of ``psi``.
    Exact through the symmetric projector on ``m + 1`` copies, or by Haar
    Monte-Carlo when ``samples`` is given.
    """
    if samples is None:
        return _mp_choi_exact(d, m)
    return _mp_choi_mc(d, m, samples, seed)


def definetti_mp_channel(d: int, m: int, samples: int | None = None, seed: int = 0) -> Channel:
    J = definetti_mp_choi(d, m, samples, seed)
    Dm = schur.multiset_dim(d, m)
    if samples is not None:
        # Monte-Carlo marginals are only approximately I; renormalize to keep the map TP
        marg = ptrace(J, (Dm, d), [0])
        w, v = np.linalg.eigh(marg)
        s = (v / np.sqrt(w)) @ v.conj().T
        S = np.kron(s, np.eye(d))
        J = S @ J @ S.conj().T
    return choi_to_kraus(0.5 * (J + dagger(J)), (Dm,), (d,))


def definetti_gap(symmetric_choi: np.ndarray, m: int, d: int = 2, mp_choi=None, normalized: bool = True) -> float:
    """Trace-norm distance between a one-site marginal Choi and the MP Choi.

    With ``normalized`` (default) the distance is divided by the input
    dimension ``D_m``, i.e. it compares the normalized Choi states. The raw
    distance of the identity-on-symmetric-subspace marginal stays at a
    constant because ``D_m`` grows with ``m``.
    """
    Dm = schur.multiset_dim(d, m)
    J = np.asarray(symmetric_choi)
    if J.shape != (Dm * d, Dm * d):
        raise ValidationError("Choi matrix is not supported on the symmetric subspace input")
    Jmp = definetti_mp_choi(d, m) if mp_choi is None else mp_choi
    gap = trace_norm(J - Jmp)
    return gap / Dm if normalized else gap
