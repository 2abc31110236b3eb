"""One test per acceptance criterion; each registers a PASS/FAIL line.

A criterion that is implemented faithfully but misses its stated tolerance
is reported as FAIL in the summary while the test asserts the values that
were actually measured, so regressions are still caught.
"""
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE
from cqi import cloning_rp as cr
from cqi import dme, qpa, schur
from cqi import framework as fw
from cqi.numerics import (
    Channel,
    haar_pure_state,
    haar_unitary,
    haar_vector,
    make_rng,
    mix_channels,
    random_channel,
    random_mixed_state,
    trace_norm,
)


def report(num: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d}: {detail}"
    ACCEPTANCE[num] = line
    print(line)


def test_criterion_01_cloning_oracle():
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for d in (2, 3):
        mmax = int(math.floor(math.log(729, d) + 1e-9))
        for m in range(2, mmax + 1):
            ch_cache = {}
            for n in range(1, m):
                ch = ch_cache.setdefault(n, cr.werner_cloner(n, m, d))
                spec = cr.RpSpec(n, m, d, 1)
                fa, fo = float(cr.f_all_bound(spec)), float(cr.f_one_bound(spec))
                rng = make_rng(1, d, n, m)
                for _ in range(20):
                    a, o = cr.cloning_fidelities(haar_vector(d, rng), n, m, d, ch)
                    worst = max(worst, abs(a - fa), abs(o - fo))
                cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 120
    report(1, ok, f"{cases} (d,n,m) cases, max deviation {worst:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_rp_consistency():
    t0 = time.perf_counter()
    rho = random_mixed_state(2, make_rng(2))
    spec = cr.RpSpec(2, 3, 2, 2)
    fid = cr.system_fidelities(cr.purify_and_clone(spec), rho)
    bound = float(cr.f_one_bound(spec))
    psi0 = cr.purification(rho, 2)
    diff = np.abs(cr.rp_twirl_exact(psi0, 2, 2, 2) - cr.rp_twirl_mc(psi0, 2, 2, 2, 100_000, seed=2)).max()
    elapsed = time.perf_counter() - t0
    ok = fid["one_site_system"] >= bound - 1e-6 and diff < 3e-3 and elapsed < 300
    report(2, ok, f"one-site {fid['one_site_system']:.6f} >= {bound:.6f}, exact/MC max entry diff {diff:.1e}")
    assert ok


def test_criterion_03_separation_slopes():
    ns = [8, 16, 32, 64]
    tab = cr.separation_table(2, 1, 1, ns)
    coh_ok = abs(tab.coherent_slope + 2) <= 0.1
    eb_ok = abs(tab.eb_slope + 1) <= 0.05
    report(3, coh_ok and eb_ok,
           f"coherent slope {tab.coherent_slope:.3f} (target -2+-0.1), EB slope {tab.eb_slope:.3f} (target -1+-0.05)")
    # coherent infidelity is exactly 1/((n+1)(n+2)); its local slope only reaches -2 as n grows
    for n, coh, _ in tab.rows:
        assert coh == Fraction(1, (n + 1) * (n + 2))
    assert tab.coherent_slope == pytest.approx(-1.86, abs=0.01)
    big = cr.separation_table(2, 1, 1, [512, 1024, 2048, 4096])
    assert abs(big.coherent_slope + 2) <= 0.01
    assert eb_ok


def test_criterion_04_eb_plateau():
    val = 1 - Fraction(schur.multiset_dim(2, 200), schur.multiset_dim(2, 401))
    ok = abs(float(val) - 0.5) <= 5e-3
    report(4, ok, f"all-site EB risk at n=200 is {float(val):.5f}")
    assert ok


def test_criterion_05_qpa_calculators():
    one = qpa.one_gap_upper(1, 1, 1)
    interior = qpa.adjacent_gap_upper(1, 1, 1, 2, 3)
    rep = qpa.coherent_sample_upper(1, 1e-6, 0.1)
    C, s0 = rep.constants["C"], rep.constants["S0"]
    subst = all(S * S > C * S * math.log(C * S) for S in (s0 * (1 + 1e-9), 2 * s0, 1e3 * s0))
    below = (0.99 * s0) ** 2 <= C * 0.99 * s0 * math.log(C * 0.99 * s0)
    ok = one == 98 and interior == 135 and C == 2304 and subst and below and rep.details["r_branch_valid"]
    report(5, ok, f"one_gap_upper={one}, interior={interior}, S0={s0:.1f} at C={C:g}")
    assert ok


@pytest.mark.slow
def test_criterion_06_qpa_eb_slope():
    t0 = time.perf_counter()
    rho = np.diag([0.8, 0.2]).astype(complex)
    ns, infs, ess = [20, 40, 60], [], []
    for n in ns:
        res = qpa.eb_covariant_protocol(rho, n, 1, 1_000_000, seed=n, streams=4)
        infs.append(res.infidelity)
        ess.append(res.effective_samples)
    fit = qpa.fit_inverse_n(ns, infs)
    target = 20 / 9
    elapsed = time.perf_counter() - t0
    ok = abs(fit["slope"] - target) <= 0.25 * target and min(ess) >= 2e5 and elapsed < 1200
    report(6, ok, f"slope vs 1/n {fit['slope']:.3f} (through origin {fit['slope_through_origin']:.3f}), "
                  f"target {target:.3f}, min ESS {min(ess):.2e}")
    assert ok


def test_criterion_07_qpa_witness():
    w = qpa.separation_crossover(0.01, 1, 0.3)
    ok = w is not None and w["eb_sample_lower"] > w["coherent_135"]
    ok = ok and qpa.eb_sample_lower(0.01, w["d"] - 1, 1).value <= w["coherent_135"]
    report(7, ok, f"crossover at d={w['d']} (EB {w['eb_sample_lower']:.0f} > coherent {w['coherent_135']:.0f})")
    assert ok


def test_criterion_08_dme_scaling():
    t0 = time.perf_counter()
    ratios = {}
    for d in (2, 3):
        rho = random_mixed_state(d, make_rng(8, d))
        errs = [dme.dme_error(rho, 1.0, n, probes=8, seed=d) for n in (16, 32, 64, 128)]
        ratios[d] = [b / a for a, b in zip(errs, errs[1:])]
    elapsed = time.perf_counter() - t0
    ok = all(abs(r - 0.5) <= 0.1 for rs in ratios.values() for r in rs) and elapsed < 300
    txt = "; ".join(f"d={d}: " + ", ".join(f"{r:.3f}" for r in rs) for d, rs in ratios.items())
    report(8, ok, f"error(2n)/error(n) {txt}")
    assert ok


def test_criterion_09_embedding_lemma():
    total, pairs = 0, 0
    for T in (1.0, math.pi / 2, math.pi):
        r0 = dme.compute_r0(T)
        for d in (2, 3, 4):
            res = dme.embedding_violations(T, d, 10_000, seed=int(100 * T) + d, r0=r0)
            total += res["violations"]
            pairs += res["pairs"]
    ok = total == 0
    report(9, ok, f"{total} violations over {pairs} admissible pairs")
    assert ok


@pytest.mark.slow
def test_criterion_10_dme_dimension():
    n, T = 4096, 1.0
    increasing, lmr_spread = 0, []
    for seed in range(3):
        inc, lmr = [], []
        for d in (2, 3, 4):
            rho = haar_pure_state(d, make_rng(100 + seed, d))
            inc.append(dme.incoherent_dme_error(rho, T, n, probes=4, seed=seed, reps=5)[0])
            lmr.append(dme.dme_error(rho, T, n, probes=4, seed=seed))
        increasing += all(b > a for a, b in zip(inc, inc[1:]))
        lmr_spread.append((max(lmr) - min(lmr)) / min(lmr))
    ok = increasing >= 2 and max(lmr_spread) < 0.2
    report(10, ok, f"incoherent increasing in d for {increasing}/3 seeds, LMR relative spread {max(lmr_spread):.3f}")
    assert ok


def test_criterion_11_definetti_decay():
    ms = list(range(2, 9))
    gaps = [fw.definetti_gap(fw.sym_marginal_choi(2, m), m, 2) for m in ms]
    slope = float(np.polyfit(np.log(ms), np.log(gaps), 1)[0])
    ok = abs(slope + 1) <= 0.3
    report(11, ok, f"normalized gap exponent {slope:.3f} (gap = 2/(m+1))")
    assert all(g == pytest.approx(2 / (m + 1), abs=1e-9) for g, m in zip(gaps, ms))
    assert ok


def _framework_properties() -> dict:
    out = {}
    task = fw.identity_task(2)
    rng = make_rng(12)
    # convexity of the average risk in the protocol
    t1, t2 = random_channel(2, 2, 2, rng), random_channel(2, 2, 2, rng)
    r1, r2 = fw.average_risk(task, t1, 500, 1), fw.average_risk(task, t2, 500, 1)
    mix = fw.average_risk(task, mix_channels([t1, t2], [0.5, 0.5]), 500, 1)
    out["convexity"] = mix.value <= 0.5 * (r1.value + r2.value) + 3 * mix.stderr
    # continuity in the diamond-style Choi distance
    td = fw.identity_task(2, loss=fw.TRACE_DISTANCE)
    s = random_channel(2, 2, 2, rng)
    t = mix_channels([s, random_channel(2, 2, 2, rng)], [0.9, 0.1])
    a, b = fw.average_risk(td, s, 100, 2), fw.average_risk(td, t, 100, 2)
    out["continuity"] = abs(a.value - b.value) <= trace_norm(s.choi() - t.choi()) + 3 * math.hypot(a.stderr, b.stderr)
    # twirling never increases the risk
    raw = random_channel(2, 2, 2, rng)
    a, b = fw.average_risk(task, raw, 2000, 3), fw.average_risk(task, fw.unitary_twirl(raw), 2000, 3)
    task2 = fw.identity_task(2, n=2, m=1)
    ch2 = Channel(random_channel(4, 2, 3, rng).kraus, (2, 2), (2,))
    c, e = fw.average_risk(task2, ch2, 500, 4), fw.average_risk(task2, fw.exchange_twirl(ch2), 500, 4)
    out["twirl-monotonicity"] = (b.value <= a.value + 3 * math.hypot(a.stderr, b.stderr)
                                 and e.value <= c.value + 3 * math.hypot(c.stderr, e.stderr))
    # covariant protocols have one orbit, so worst case equals average
    cov = fw.unitary_twirl(random_channel(2, 2, 3, rng))
    losses = [fw.per_input_loss(task, cov, task.sample(rng)) for _ in range(20)]
    out["single-orbit"] = float(np.ptp(losses)) < 1e-9
    # covariant outputs carry no coherence across weight types
    cov2 = fw.unitary_twirl(Channel(random_channel(4, 4, 3, rng).kraus, (2, 2), (2, 2)))
    weight = [bin(i).count("1") for i in range(4)]
    ok = True
    for idx in range(4):
        x = np.zeros((4, 4))
        x[idx, idx] = 1
        y = cov2(x)
        ok &= all(abs(y[i, j]) < 1e-9 for i in range(4) for j in range(4) if weight[i] != weight[j])
    out["block-diagonality"] = bool(ok)
    # POVM completeness: finite exact, continuous covariant by MC
    fin = fw.FinitePovm(tuple(np.outer(u, u.conj()) for u in haar_unitary(3, rng).T))
    cont = qpa.covariant_povm(2, 2).completeness(20_000, seed=5)
    out["povm-completeness"] = np.allclose(sum(fin.effects), np.eye(3)) and np.abs(cont - np.eye(4)).max() < 5e-2
    # isotypic projectors
    proj_ok = True
    for n, d in itertools.product(range(1, 5), range(1, 4)):
        lams = schur.partitions(n, d)
        Ps = {lam: schur.isotypic_projector(lam, d) for lam in lams}
        proj_ok &= np.allclose(sum(Ps.values()), np.eye(d ** n), atol=1e-9)
        proj_ok &= all(np.abs(Ps[x] @ Ps[y]).max() < 1e-9 for x, y in itertools.combinations(lams, 2))
        proj_ok &= all(round(np.trace(P).real) == schur.weyl_dim(l, d) * schur.sn_dim(l) for l, P in Ps.items())
    out["schur-projectors"] = bool(proj_ok)
    # dimension ratio against Weyl dimensions, exact rationals
    ratio_ok = True
    for d in range(2, 5):
        for n in range(1, 7):
            for lam in schur.partitions(n, d):
                for k in range(1, d + 1):
                    alpha = schur.delete_row(lam, k, d)
                    want = Fraction(schur.weyl_dim(lam, d), schur.weyl_dim(alpha, d - 1))
                    got = schur.dimension_ratio(lam, k, d)
                    ratio_ok &= isinstance(got, Fraction) and got == want
    out["dimension-ratio"] = bool(ratio_ok)
    return out


def test_criterion_12_framework_properties():
    t0 = time.perf_counter()
    props = _framework_properties()
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in props.items() if not v]
    ok = not failed and elapsed < 600
    report(12, ok, f"{len(props) - len(failed)}/{len(props)} property groups hold"
                   + (f", failing: {', '.join(failed)}" if failed else ""))
    assert ok
