"""Command-line entry point ``cqi``."""
from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import harness
from .harness import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ConfigError


def _selftest() -> int:
    """Quick invariant checks across modules; prints one line per check."""
    from . import cloning_rp, dme, schur
    from .numerics import DensityOperator, make_rng, random_mixed_state

    def proj_complete():
        tot = sum(schur.isotypic_projector(lam, 2) for lam in schur.partitions(3, 2))
        return np.allclose(tot, np.eye(8))

    def ratio_exact():
        lam = (3, 1)
        return schur.dimension_ratio(lam, 2, 3) == schur.weyl_dim(lam, 3) / schur.weyl_dim(schur.delete_row(lam, 2, 3), 2)

    def cloner_formula():
        psi = np.array([0.6, 0.8j])
        fa, fo = cloning_rp.cloning_fidelities(psi, 1, 2, 2)
        spec = cloning_rp.RpSpec(1, 2, 2)
        return abs(fa - float(cloning_rp.f_all_bound(spec))) < 1e-9 and abs(fo - float(cloning_rp.f_one_bound(spec))) < 1e-9

    def lmr_trace():
        rho = random_mixed_state(2, make_rng(0))
        s = dme.probe_states(rho, 1, 0)[0]
        out = dme.lmr_step(s, rho, 0.1).matrix
        return abs(np.trace(out) - 1) < 1e-10 and np.linalg.eigvalsh(out)[0] > -1e-10

    def gamma_dual():
        th = np.array([0.1, -0.2])
        return np.allclose(dme.gamma_state(th, 1.0).matrix, dme.gamma_state(th, 1.0, "expm").matrix, atol=1e-10)

    def r0_positive():
        return dme.compute_r0(np.pi) > 0

    checks = [("schur projector completeness", proj_complete), ("dimension ratio exact", ratio_exact),
              ("cloner matches formulas", cloner_formula),
              ("lmr step is trace preserving", lmr_trace), ("gamma closed form", gamma_dual),
              ("r0 positive at T=pi", r0_positive)]
    status = EXIT_OK
    for name, fn in checks:
        try:
            ok = bool(fn())
        except Exception as exc:  # selftest reports, never raises
            ok = False
            name = f"{name} ({exc})"
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok:
            status = EXIT_NUMERIC
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cqi", description="Coherent vs incoherent quantum inference experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for task in harness.TASKS:
        p = sub.add_parser(task, help=f"run the {task} grid")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--out")
        p.add_argument("--format", choices=["csv", "json"])
        p.add_argument("--timing", action="store_true", help="fill the ms column (breaks byte determinism)")
    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("--config", required=True)
    sub.add_parser("selftest", help="run quick invariant checks")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return _selftest()
    try:
        cfg = harness.load_config(args.config)
        if args.command == "validate":
            print(f"ok: {cfg.task} with {len(cfg.grid())} grid points")
            return EXIT_OK
        if cfg.task != args.command:
            raise ConfigError(f"config task {cfg.task!r} does not match command {args.command!r}")
        over = {k: getattr(args, k) for k in ("seed", "samples", "out", "format") if getattr(args, k) is not None}
        cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), **over})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = harness.run_experiment(cfg, timing=args.timing)
    text = harness.emit(result.records, cfg.format, cfg.out)
    if cfg.out is None:
        sys.stdout.write(text)
    return result.status


if __name__ == "__main__":
    sys.exit(main())
