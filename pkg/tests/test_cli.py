import json
import time

import numpy as np
import pytest

from fragflow.cli import EXIT_CONFIG, EXIT_DATA, main
from fragflow.flowgraph import check_dot
from fragflow.tasks import BlockCatchConfig, NBackConfig, Trace, task_config_to_dict

from _builders import constant_brain, shift_register, shift_register_genome

TINY = {"seed": 11, "task": {"name": "nback"},
        "ea": {"population": 10, "generations": 5}}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def shift_files(tmp_path):
    brain = write_json(tmp_path / "brain.json", shift_register().to_dict())
    cfg = write_json(tmp_path / "cfg.json", {"seed": 0, "task": {"name": "nback"}})
    trace = tmp_path / "trace.csv"
    assert main(["trace", brain, "--config", cfg, "--out", str(trace)]) == 0
    return tmp_path, brain, cfg, str(trace)


def test_evolve_writes_declared_files(tmp_path, monkeypatch):
    monkeypatch.delenv("FRAGFLOW_OUT", raising=False)
    cfg = write_json(tmp_path / "cfg.json", TINY)
    for run in ("a", "b"):
        assert main(["evolve", "--config", cfg, "--out", str(tmp_path / run)]) == 0
    for f in ("config.json", "stats.csv", "lineage.jsonl", "lod.json", "brain.json"):
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes()
    lod = json.loads((tmp_path / "a" / "lod.json").read_text())
    assert len(lod["path"]) == 6 and len(lod["genome"]) == 2000


def test_evolve_seed_flag_and_env(tmp_path, monkeypatch):
    cfg = dict(TINY)
    del cfg["seed"]
    path = write_json(tmp_path / "cfg.json", cfg)
    assert main(["evolve", "--config", path]) == EXIT_CONFIG
    monkeypatch.setenv("FRAGFLOW_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("FRAGFLOW_WORKERS", "2")
    assert main(["evolve", "--config", path, "--seed", "11"]) == 0
    assert (tmp_path / "env" / "stats.csv").exists()
    monkeypatch.setenv("FRAGFLOW_OUT", str(tmp_path / "serial"))
    monkeypatch.setenv("FRAGFLOW_WORKERS", "1")
    assert main(["evolve", "--config", path, "--seed", "11"]) == 0
    assert ((tmp_path / "env" / "lineage.jsonl").read_bytes()
            == (tmp_path / "serial" / "lineage.jsonl").read_bytes())


@pytest.mark.parametrize("bad", [
    {"seed": -1},
    {"seed": 1, "bogus": 2},
    {"seed": 1, "brain": "lstm"},
    {"seed": 1, "ea": {"point_rate": 2.0}},
    {"seed": 1, "task": {"name": "maze"}},
    {"seed": 1, "analysis": {"threshold": 3.0}},
])
def test_invalid_configs(tmp_path, bad):
    cfg = write_json(tmp_path / "cfg.json", bad)
    assert main(["evolve", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_unparsable_config_and_args(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{nope")
    assert main(["evolve", "--config", str(p)]) == EXIT_CONFIG
    assert main(["no-such-command"]) == EXIT_CONFIG


def test_trace_rows_and_repeatability(shift_files, tmp_path):
    _, brain, cfg, trace = shift_files
    assert Trace.load(trace).n_rows == 825
    again = tmp_path / "again.csv"
    assert main(["trace", brain, "--config", cfg, "--out", str(again)]) == 0
    assert again.read_bytes() == open(trace, "rb").read()
    bc = write_json(tmp_path / "bc.json",
                    constant_brain(BlockCatchConfig().io, (1, 0)).to_dict())
    out = tmp_path / "bc.csv"
    assert main(["trace", bc, "--task", "blockcatch", "--out", str(out)]) == 0
    assert Trace.load(out).n_rows == 3840


def test_trace_errors(tmp_path):
    assert main(["trace", str(tmp_path / "missing.json"), "--task", "blockcatch"]) == EXIT_DATA
    brain = write_json(tmp_path / "b.json", shift_register().to_dict())
    assert main(["trace", brain, "--task", "blockcatch",
                 "--out", str(tmp_path / "x.csv")]) == EXIT_DATA
    assert main(["trace", brain, "--task", "nback"]) == EXIT_CONFIG


def test_frag_shift_register(shift_files, capsys):
    d, _, _, trace = shift_files
    prefix = str(d / "m")
    assert main(["frag", trace, "--features", "t1_o*", "--sizes", "1,full",
                 "--out", prefix]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["t1_o0\tF=1\tt0_m0", "t1_o1\tF=1\tt0_m2",
                     "t1_o2\tF=1\tt0_m4", "t1_o3\tF=1\tt0_m6",
                     "t1_o4\tF=1\tt0_m7"]
    meta = json.loads((d / "m.csv").read_text().splitlines()[0][2:])
    assert meta["omitted_sizes"] == [2, 3, 4, 5, 6, 7]
    assert (d / "m.json").exists()


def test_frag_threshold_changes_minima(tmp_path, capsys):
    rng = np.random.default_rng(0)
    n = 64
    cols = {"lifetime": np.repeat(np.arange(8), 8), "t": np.tile(np.arange(8), 8)}
    a, b = rng.integers(0, 2, n), rng.integers(0, 2, n)
    cols.update({"t0_m0": a, "t0_m1": b, "f_or": a | b})
    trace = Trace(list(cols), np.column_stack(list(cols.values())))
    path = tmp_path / "t.csv"
    trace.save(path)
    outs = []
    # A single input of an OR carries about 38% of what both carry.
    for thr in ("0.99", "0.3"):
        assert main(["frag", str(path), "--threshold", thr,
                     "--out", str(tmp_path / thr)]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0].startswith("f_or\tF=2") and outs[1].startswith("f_or\tF=1")
    assert main(["frag", str(path), "--threshold", "0.99",
                 "--out", str(tmp_path / "again")]) == 0
    assert capsys.readouterr().out == outs[0]


def test_frag_is_fast_and_deterministic(shift_files):
    d, _, _, trace = shift_files
    start = time.perf_counter()
    assert main(["frag", trace, "--sizes", "1,full", "--out", str(d / "x")]) == 0
    assert time.perf_counter() - start < 1.0
    assert main(["frag", trace, "--sizes", "1,full", "--workers", "2",
                 "--out", str(d / "y")]) == 0
    assert (d / "x.csv").read_bytes() == (d / "y.csv").read_bytes()
    assert (d / "x.json").read_bytes() == (d / "y.json").read_bytes()


def test_frag_errors(shift_files):
    d, _, _, trace = shift_files
    assert main(["frag", trace, "--features", "nope*"]) == EXIT_DATA
    assert main(["frag", trace, "--sizes", "1,x"]) == EXIT_CONFIG
    assert main(["frag", trace, "--sizes", "12"]) == EXIT_CONFIG
    assert main(["frag", trace, "--threshold", "1.5"]) == EXIT_CONFIG
    assert main(["frag", str(d / "missing.csv")]) == EXIT_DATA


def test_flow_with_window(shift_files, capsys):
    d, brain, _, trace = shift_files
    prefix = str(d / "flow")
    assert main(["flow", trace, "--brain", brain, "--window", "0.25",
                 "--out", prefix]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 2
    for suffix, line in zip(("", ".late0.25"), out):
        graph = json.loads((d / f"flow{suffix}.json").read_text())
        check_dot((d / f"flow{suffix}.dot").read_text())
        assert line.endswith(f"complexity {len(graph['links'])}")
    assert json.loads((d / "flow.json").read_text())["complexity"] == 13


def test_flow_rejects_bad_window(shift_files):
    d, _, _, trace = shift_files
    prefix = d / "bad"
    assert main(["flow", trace, "--window", "1.5", "--out", str(prefix)]) == EXIT_CONFIG
    # Nothing is written when the settings are rejected.
    assert not list(d.glob("bad*"))


def _lod(tmp_path, name, genome, task):
    run = tmp_path / name
    run.mkdir()
    return write_json(run / "lod.json", {
        "brain": "markov", "task": task_config_to_dict(task),
        "genome": np.asarray(genome).tolist(), "path": [], "final_index": 0})


def test_robust_zero_rates_and_report(tmp_path, capsys):
    lod_a = _lod(tmp_path, "a", shift_register_genome(), NBackConfig())
    lod_b = _lod(tmp_path, "b", shift_register_genome(), NBackConfig(seed=3))
    zero = {"seed": 5, "ea": {"point_rate": 0.0, "offset_rate": 0.0,
                              "copy_rate": 0.0}}
    cfg = write_json(tmp_path / "zero.json", zero)
    out = tmp_path / "rob"
    assert main(["robust", lod_a, lod_b, "--config", cfg, "--n", "5",
                 "--out", str(out)]) == 0
    reps = json.loads((out / "replicates.json").read_text())
    assert [r["offset"] for r in reps] == [1.0, 1.0]
    assert [r["complexity"] for r in reps] == [13, 13]
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"fit_all", "fit_perfect"}
    first = (out / "report.csv").read_bytes()
    assert main(["report", str(out / "replicates.json"),
                 "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "report.csv").read_bytes() == first


def test_robust_default_rates(tmp_path):
    lod = _lod(tmp_path, "a", shift_register_genome(), NBackConfig())
    out = tmp_path / "rob"
    assert main(["robust", lod, "--seed", "1", "--n", "20", "--out", str(out)]) == 0
    rep = json.loads((out / "replicates.json").read_text())[0]
    assert rep["offset"] <= 1.0 and rep["perfect"]
    assert not (out / "report.json").exists()
    assert main(["robust", lod, "--n", "3"]) == EXIT_CONFIG


def test_report_needs_two(tmp_path):
    p = write_json(tmp_path / "r.json", [{"replicate": "a", "baseline": 1.0,
                                          "mean_mutant": 1.0, "offset": 1.0,
                                          "complexity": 3, "perfect": True}])
    assert main(["report", p, "--out", str(tmp_path / "o")]) == EXIT_DATA
