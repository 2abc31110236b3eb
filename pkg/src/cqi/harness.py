"""Experiment orchestration: configs, per-point execution, flat records, emitters."""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import json
import math
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import cloning_rp, dme, framework, qpa
from .numerics import ValidationError, haar_pure_state, make_rng, random_mixed_state

TASKS = ("identity", "rp", "cloning", "qpa", "dme", "definetti")
SCHEMA = 1
CSV_FIXED = ["task", "metric", "value", "stderr", "formula", "valid", "seed", "ms"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TIMEOUT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str
    d: list = field(default_factory=lambda: [2])
    n: list = field(default_factory=lambda: [1])
    r: int = 1
    ell: int = 1
    k: int = 1
    p: list | None = None
    T: float = 1.0
    eps: float = 0.01
    d_min: float = 0.3
    probes: int = 8
    samples: int = 10_000
    seed: int = 0
    out: str | None = None
    format: str = "csv"
    timeout: float = 60.0
    schema: int = SCHEMA

    def __post_init__(self):
        if self.schema != SCHEMA:
            raise ConfigError(f"unsupported schema {self.schema!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        for name in ("d", "n"):
            v = getattr(self, name)
            if v is None:
                continue
            v = [v] if isinstance(v, int) else list(v)
            if not v or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in v):
                raise ConfigError(f"{name} must be a positive integer or a nonempty list of them")
            setattr(self, name, v)
        if self.samples < 1 or self.timeout <= 0:
            raise ConfigError("samples and timeout must be positive")
        if self.r < 1 or self.ell < 1 or self.k < 1:
            raise ConfigError("r, ell and k must be positive")
        if self.p is not None:
            self.p = [float(x) for x in self.p]
        self._check_limits()

    def _check_limits(self):
        t = self.task
        if t == "cloning":
            for d, n in self.grid():
                if d ** (n + self.ell) > 4096:
                    raise ConfigError(f"cloning grid point d={d}, n={n} exceeds d^m <= 4096")
        if t == "definetti":
            if any(d ** (m + 1) > 4096 for d in self.d for m in self.n):
                raise ConfigError("definetti grid exceeds d^(m+1) <= 4096")
        if t == "dme" and max(self.d) > 6:
            raise ConfigError("dme grid is limited to d <= 6")
        if t == "rp" and self.r > min(self.d):
            raise ConfigError("r must not exceed d")
        if t == "qpa" and self.p is not None:
            if len(self.d) != 1 or self.d[0] != len(self.p):
                raise ConfigError("qpa with a spectrum p needs d == [len(p)]")
            qpa.SpectrumParams(tuple(self.p), self.k)

    def grid(self) -> list:
        return sorted(itertools.product(self.d, self.n))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown config fields: {', '.join(extra)}")
        if "schema" not in data:
            raise ConfigError("missing 'schema' field")
        if "task" not in data:
            raise ConfigError("missing 'task' field")
        try:
            return cls(**data)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            return ExperimentConfig.from_json(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc


@dataclass
class ExperimentRecord:
    task: str
    params: dict
    metric: str
    value: float
    stderr: float = 0.0
    formula: float | None = None
    valid: str = "ok"
    seed: int = 0
    ms: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentRecord":
        return cls(**data)


@dataclass
class RunResult:
    records: list
    status: int


# ---------------------------------------------------------------- per-point work

def _point_seed(seed: int, idx: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(idx,)).generate_state(1)[0])


def _flag(value, formula, stderr, default="ok"):
    if formula is None or stderr == 0:
        return default
    return default if abs(value - formula) <= 3 * stderr else "mc-deviates"


def _identity_point(cfg, d, n, seed):
    rec = [
        ExperimentRecord("identity", {}, "coherent.risk", 0.0, 0.0, 0.0),
        ExperimentRecord("identity", {}, "incoherent.risk", float(cloning_rp.eb_tomography_risk(n, 1, d, "one")),
                         0.0, float(cloning_rp.eb_tomography_risk(n, 1, d, "one"))),
    ]
    if d == 2:
        rho = haar_pure_state(d, make_rng(seed))
        res = qpa.eb_covariant_protocol(rho, n, 1, cfg.samples, seed)
        exact = float(cloning_rp.eb_one_site_exact(n, d))
        rec.append(ExperimentRecord("identity", {}, "incoherent.mc", res.infidelity, res.stderr, exact,
                                    _flag(res.infidelity, exact, res.stderr)))
    return rec


def _rp_point(cfg, d, n, seed):
    spec = cloning_rp.RpSpec(n, n + cfg.ell, d, cfg.r)
    coh = float(1 - cloning_rp.f_one_bound(spec))
    eb = float(cloning_rp.eb_tomography_risk(n, n + cfg.ell, d, "one"))
    all_eb = float(cloning_rp.eb_tomography_risk(n, n + cfg.ell, d, "all"))
    return [
        ExperimentRecord("rp", {}, "coherent.one_site", coh, 0.0, coh),
        ExperimentRecord("rp", {}, "eb.one_site", eb, 0.0, eb),
        ExperimentRecord("rp", {}, "coherent.all_site", float(1 - cloning_rp.f_all_bound(spec)), 0.0,
                         float(1 - cloning_rp.f_all_bound(spec))),
        ExperimentRecord("rp", {}, "eb.all_site", all_eb, 0.0, all_eb),
    ]


def _cloning_point(cfg, d, n, seed):
    m = n + cfg.ell
    rng = make_rng(seed)
    spec = cloning_rp.RpSpec(n, m, d, 1)
    inputs = min(cfg.samples, 20)
    f_all, f_one = [], []
    for _ in range(inputs):
        psi = rng.normal(size=d) + 1j * rng.normal(size=d)
        psi /= np.linalg.norm(psi)
        fa, fo = cloning_rp.cloning_fidelities(psi, n, m, d)
        f_all.append(fa)
        f_one.append(fo)
    out = []
    for name, vals, exact in (("fidelity.all_site", f_all, cloning_rp.f_all_bound(spec)),
                              ("fidelity.one_site", f_one, cloning_rp.f_one_bound(spec))):
        v = float(np.mean(vals))
        ok = "ok" if max(abs(x - float(exact)) for x in vals) <= 1e-9 else "formula-mismatch"
        out.append(ExperimentRecord("cloning", {"m": m}, name, v, 0.0, float(exact), ok))
    return out


def _qpa_point(cfg, d, n, seed):
    out = []
    eb = qpa.eb_sample_lower(cfg.eps, d, cfg.k)
    coh = qpa.coherent_sample_upper(1, cfg.eps, cfg.d_min)
    out.append(ExperimentRecord("qpa", {}, "eb.sample_lower", eb.value, 0.0, eb.value, "asymptotic"))
    out.append(ExperimentRecord("qpa", {}, "coherent.sample_upper", coh.value, 0.0, coh.value))
    if cfg.p is not None:
        spec = qpa.SpectrumParams(tuple(cfg.p), cfg.k)
        rho = np.diag(np.asarray(cfg.p, complex))
        res = qpa.eb_covariant_protocol(rho, n, cfg.k, cfg.samples, seed)
        asym = 1 - qpa.eb_asymptotic_fidelity(n, spec).value
        out.append(ExperimentRecord("qpa", {}, "eb.infidelity", res.infidelity, res.stderr, asym,
                                    "low-ess" if res.flagged else "asymptotic"))
    return out


def _dme_point(cfg, d, n, seed):
    # the state depends on d only, so an n sweep tracks one rho
    rho = random_mixed_state(d, make_rng(cfg.seed, d))
    out = [ExperimentRecord("dme", {}, "lmr.error_lower_bound",
                            dme.dme_error(rho, cfg.T, n, cfg.probes, cfg.seed), 0.0, None, "diamond-lower-bound")]
    if n >= d * d:
        mean, se = dme.incoherent_dme_error(rho, cfg.T, n, cfg.probes, seed, reps=5)
        out.append(ExperimentRecord("dme", {}, "incoherent.error_lower_bound", mean, se, None, "diamond-lower-bound"))
    lb = dme.incoherent_lower_bound(cfg.eps, d, cfg.T)
    out.append(ExperimentRecord("dme", {}, "incoherent.sample_lower", lb.value, 0.0, lb.value,
                                "ok" if lb.valid else "eps-outside-range"))
    return out


def _definetti_point(cfg, d, m, seed):
    gap = framework.definetti_gap(framework.sym_marginal_choi(d, m), m, d)
    raw = framework.definetti_gap(framework.sym_marginal_choi(d, m), m, d, normalized=False)
    return [
        ExperimentRecord("definetti", {}, "gap.normalized", gap, 0.0, 2 / (m + 1) if d == 2 else None),
        ExperimentRecord("definetti", {}, "gap.raw", raw, 0.0, None),
    ]


POINTS: dict[str, Callable] = {
    "identity": _identity_point,
    "rp": _rp_point,
    "cloning": _cloning_point,
    "qpa": _qpa_point,
    "dme": _dme_point,
    "definetti": _definetti_point,
}


def _run_point(args):
    cfg_dict, idx, d, n, timing = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    seed = _point_seed(cfg.seed, idx)
    t0 = time.perf_counter()
    try:
        recs = POINTS[cfg.task](cfg, d, n, seed)
        failed = False
    except (ValidationError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        recs = [ExperimentRecord(cfg.task, {}, "error", math.nan, 0.0, None, f"error: {type(exc).__name__}")]
        failed = True
    ms = round(1000 * (time.perf_counter() - t0), 3) if timing else None
    key = "m" if cfg.task == "definetti" else "n"
    for r in recs:
        r.value = float(r.value)
        r.stderr = float(r.stderr)
        r.formula = None if r.formula is None else float(r.formula)
        r.params = {"d": d, key: n, **r.params}
        r.seed = cfg.seed
        r.ms = ms
    return recs, failed


def _threads(points: int) -> int:
    env = os.environ.get("CQI_THREADS")
    cap = int(env) if env and env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, min(cap, points))


def run_experiment(cfg: ExperimentConfig, timing: bool = False) -> RunResult:
    """Run every grid point in a worker pool; records come back in grid order."""
    pts = cfg.grid()
    jobs = [(cfg.to_dict(), i, d, n, timing) for i, (d, n) in enumerate(pts)]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    records, status = [], EXIT_OK
    pool = ctx.Pool(_threads(len(jobs)))
    try:
        handles = [pool.apply_async(_run_point, (j,)) for j in jobs]
        for (d, n), h, job in zip(pts, handles, jobs):
            try:
                recs, failed = h.get(timeout=cfg.timeout)
                if failed and status == EXIT_OK:
                    status = EXIT_NUMERIC
            except mp.TimeoutError:
                key = "m" if cfg.task == "definetti" else "n"
                recs = [ExperimentRecord(cfg.task, {"d": d, key: n}, "timeout", math.nan, 0.0, None, "timeout",
                                         cfg.seed, None)]
                status = EXIT_TIMEOUT
            records.extend(recs)
    finally:
        pool.terminate()
        pool.join()
    records.extend(summarize(cfg, records))
    return RunResult(records, status)


# ---------------------------------------------------------------- fits

def _fit(x, y, log_x=True, log_y=True):
    x, y = np.asarray(x, float), np.asarray(y, float)
    X = np.log(x) if log_x else x
    Y = np.log(y) if log_y else y
    slope, icpt = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + icpt)
    ss = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return float(slope), float(r2)


FITS = {
    # task: (metric, x axis, log x, log y); the "1/n" axis fits against 1/n
    "rp": [("coherent.one_site", "n", True, True), ("eb.one_site", "n", True, True)],
    "identity": [("incoherent.risk", "n", True, True)],
    "dme": [("lmr.error_lower_bound", "n", True, True), ("incoherent.error_lower_bound", "n", True, True)],
    "definetti": [("gap.normalized", "m", True, True)],
    "qpa": [("eb.sample_lower", "d", False, False), ("coherent.sample_upper", "d", False, False),
            ("eb.infidelity", "1/n", False, False)],
    "cloning": [],
}


def summarize(cfg: ExperimentConfig, records: list) -> list:
    """Append ``fit.slope`` / ``fit.r2`` per series; the series holds other grid axes fixed."""
    out = []
    for metric, axis, lx, ly in FITS[cfg.task]:
        rows = [r for r in records if r.metric == metric and math.isfinite(r.value)]
        xkey = "n" if axis == "1/n" else axis
        groups = {}
        for r in rows:
            rest = tuple(sorted((k, v) for k, v in r.params.items() if k != xkey))
            groups.setdefault(rest, []).append(r)
        for rest, grp in sorted(groups.items()):
            xs = [g.params[xkey] for g in grp]
            ys = [g.value for g in grp]
            if len(set(xs)) < 2 or (ly and min(ys) <= 0):
                continue
            xv = [1 / x for x in xs] if axis == "1/n" else xs
            slope, r2 = _fit(xv, ys, lx, ly)
            params = {**dict(rest), "series": metric, "axis": axis}
            out.append(ExperimentRecord(cfg.task, params, "fit.slope", slope, 0.0, None, "ok", cfg.seed))
            out.append(ExperimentRecord(cfg.task, params, "fit.r2", r2, 0.0, None, "ok", cfg.seed))
    return out


def run_identity(cfg):
    return _run_task(cfg, "identity")


def run_rp(cfg):
    return _run_task(cfg, "rp")


def run_cloning(cfg):
    return _run_task(cfg, "cloning")


def run_qpa(cfg):
    return _run_task(cfg, "qpa")


def run_dme(cfg):
    return _run_task(cfg, "dme")


def run_definetti(cfg):
    return _run_task(cfg, "definetti")


def _run_task(cfg, task):
    if cfg.task != task:
        cfg = dataclasses.replace(cfg, task=task)
    return run_experiment(cfg).records


# ---------------------------------------------------------------- emitters

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def to_csv(records: list) -> str:
    keys = sorted({k for r in records for k in r.params})
    header = ["task"] + [f"param.{k}" for k in keys] + CSV_FIXED[1:]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in records:
        w.writerow([r.task] + [_fmt(r.params.get(k)) for k in keys]
                   + [r.metric, _fmt(r.value), _fmt(r.stderr), _fmt(r.formula), r.valid, r.seed, _fmt(r.ms)])
    return buf.getvalue()


def to_json(records: list) -> str:
    def clean(v):
        return None if isinstance(v, float) and not math.isfinite(v) else v

    rows = [{k: clean(v) for k, v in r.to_dict().items()} for r in records]
    return json.dumps(rows, sort_keys=True, indent=1) + "\n"


def from_json(text: str) -> list:
    return [ExperimentRecord.from_dict({k: (math.nan if k == "value" and v is None else v) for k, v in row.items()})
            for row in json.loads(text)]


def emit(records: list, fmt: str = "csv", path: str | None = None) -> str:
    """Serialize records; writes to ``path`` when given and returns the text."""
    if not records:
        raise ValueError("no records to emit")
    if fmt == "csv":
        text = to_csv(records)
    elif fmt == "json":
        text = to_json(records)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def formula_consistency(records: list) -> list:
    """Records whose value sits more than 3 stderr from the formula without a flag."""
    bad = []
    for r in records:
        if r.formula is None or not math.isfinite(r.value):
            continue
        tol = max(3 * r.stderr, 1e-9 * max(1.0, abs(r.formula)))
        if abs(r.value - r.formula) > tol and r.valid == "ok":
            bad.append(r)
    return bad
