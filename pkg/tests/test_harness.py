import json
import math
import time

import pytest

from cqi import cli, harness
from cqi.harness import ConfigError, ExperimentConfig, ExperimentRecord
from cqi.numerics import ValidationError


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_config_round_trip():
    cfg = ExperimentConfig(task="dme", d=[2, 3], n=[16, 32], T=0.5, seed=7)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.to_json() == cfg.to_json()


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError, match="unknown config fields"):
        ExperimentConfig.from_dict({"schema": 1, "task": "rp", "bogus": 1})
    with pytest.raises(ConfigError, match="schema"):
        ExperimentConfig.from_dict({"task": "rp"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"schema": 2, "task": "rp"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"schema": 1, "task": "nope"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"schema": 1, "task": "cloning", "d": [3], "n": [8]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"schema": 1, "task": "rp", "n": [0]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"schema": 1, "task": "qpa", "d": [2], "p": [0.5, 0.5]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")


def test_emit_schema_and_round_trip(tmp_path):
    recs = [ExperimentRecord("rp", {"d": 2, "n": 8}, "x", 0.5, 0.01, 0.5, "ok", 3),
            ExperimentRecord("rp", {"d": 2, "n": 16}, "y", 1.0, 0.0, None, "ok", 3)]
    text = harness.emit(recs, "csv")
    assert text.splitlines()[0] == "task,param.d,param.n,metric,value,stderr,formula,valid,seed,ms"
    js = harness.emit(recs, "json", str(tmp_path / "r.json"))
    assert harness.from_json(js) == recs
    assert (tmp_path / "r.json").read_text() == js
    with pytest.raises(ValueError):
        harness.emit([], "csv", str(tmp_path / "none.csv"))
    assert not (tmp_path / "none.csv").exists()


def test_identity_examples():
    recs = harness.run_identity(ExperimentConfig(task="identity", d=[2, 3], n=[1, 2], samples=10_000))
    get = lambda m, d, n: next(r for r in recs if r.metric == m and r.params.get("d") == d and r.params.get("n") == n)
    assert get("incoherent.risk", 2, 1).value == 0.5
    assert get("coherent.risk", 2, 1).value == 0
    assert all(r.value == 0 for r in recs if r.metric == "coherent.risk")
    for n in (1, 2):
        mc = get("incoherent.mc", 2, n)
        assert abs(mc.value - mc.formula) <= 3 * mc.stderr
    assert not harness.formula_consistency(recs)


def test_rp_grid_slopes():
    recs = harness.run_rp(ExperimentConfig(task="rp", d=[2], n=[8, 16, 32, 64]))
    slopes = {r.params["series"]: r.value for r in recs if r.metric == "fit.slope"}
    assert abs(slopes["eb.one_site"] + 1) < 0.05
    assert slopes["coherent.one_site"] < -1.5
    assert any(r.metric == "fit.r2" for r in recs)


def test_qpa_grid():
    recs = harness.run_qpa(ExperimentConfig(task="qpa", d=[2, 3, 4, 5, 6], n=[1], eps=0.01))
    eb = [r.value for r in recs if r.metric == "eb.sample_lower"]
    coh = [r.value for r in recs if r.metric == "coherent.sample_upper"]
    assert all(abs(x - eb[0] * (i + 1)) < 1e-9 for i, x in enumerate(eb))
    assert len(set(coh)) == 1
    slope = next(r for r in recs if r.metric == "fit.slope" and r.params["series"] == "eb.sample_lower")
    assert slope.value == pytest.approx(eb[0])


def test_dme_grid_ratio():
    recs = harness.run_dme(ExperimentConfig(task="dme", d=[2], n=[32, 64, 128], probes=4))
    errs = [r.value for r in recs if r.metric == "lmr.error_lower_bound"]
    assert all(0.4 <= b / a <= 0.6 for a, b in zip(errs, errs[1:]))
    assert all(r.valid == "diamond-lower-bound" for r in recs if r.metric.endswith("error_lower_bound"))


def test_definetti_and_cloning_grid():
    recs = harness.run_definetti(ExperimentConfig(task="definetti", d=[2], n=[2, 3, 4]))
    assert not harness.formula_consistency(recs)
    recs = harness.run_cloning(ExperimentConfig(task="cloning", d=[2], n=[1, 2]))
    assert all(r.valid == "ok" for r in recs)


def test_records_sorted_by_grid(tmp_path):
    cfg = ExperimentConfig(task="rp", d=[3, 2], n=[16, 8])
    recs = harness.run_experiment(cfg).records
    coords = [(r.params["d"], r.params["n"]) for r in recs if "n" in r.params]
    assert coords == sorted(coords)


def test_cli_determinism(tmp_path):
    path = _write(tmp_path, {"schema": 1, "task": "identity", "d": [2], "n": [1, 3], "samples": 2000})
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.csv"
        assert cli.main(["identity", "--config", path, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    other = tmp_path / "o2.csv"
    cli.main(["identity", "--config", path, "--out", str(other), "--seed", "5"])
    assert other.read_bytes() != outs[0]


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, {"schema": 1, "task": "rp", "extra": True})
    assert cli.main(["validate", "--config", bad]) == harness.EXIT_CONFIG
    good = _write(tmp_path, {"schema": 1, "task": "rp", "d": [2], "n": [8]}, "good.json")
    assert cli.main(["validate", "--config", good]) == 0
    assert cli.main(["dme", "--config", good]) == harness.EXIT_CONFIG
    assert cli.main(["rp", "--config", str(tmp_path / "missing.json")]) == harness.EXIT_CONFIG
    assert cli.main(["rp", "--config", good, "--format", "json"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out[out.index("["):])


def test_numeric_failure_and_timeout(monkeypatch):
    def boom(cfg, d, n, seed):
        raise ValidationError("synthetic failure")

    def slow(cfg, d, n, seed):
        if n == 2:
            time.sleep(5)
        return [ExperimentRecord(cfg.task, {}, "x", 1.0)]

    monkeypatch.setitem(harness.POINTS, "rp", boom)
    res = harness.run_experiment(ExperimentConfig(task="rp", d=[2], n=[1, 2]))
    assert res.status == harness.EXIT_NUMERIC
    assert all(r.metric == "error" and math.isnan(r.value) for r in res.records)
    monkeypatch.setitem(harness.POINTS, "rp", slow)
    res = harness.run_experiment(ExperimentConfig(task="rp", d=[2], n=[1, 2], timeout=0.5))
    assert res.status == harness.EXIT_TIMEOUT
    assert [r.metric for r in res.records][:2] == ["x", "timeout"]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("CQI_THREADS", "1")
    assert harness._threads(8) == 1
    monkeypatch.setenv("CQI_THREADS", "junk")
    assert harness._threads(1) == 1


def test_timing_column():
    cfg = ExperimentConfig(task="rp", d=[2], n=[8])
    plain = harness.run_experiment(cfg).records
    timed = harness.run_experiment(cfg, timing=True).records
    assert all(r.ms is None for r in plain)
    assert all(r.ms is not None for r in timed if r.metric != "fit.slope" and r.metric != "fit.r2")


def test_selftest(capsys):
    assert cli.main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
