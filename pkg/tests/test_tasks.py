import numpy as np
import pytest

from fragflow.brains import BrainIO, ConfigurationError, Gate, MarkovBrain
from fragflow.infotheory import UsageError
from fragflow.tasks import (BlockCatchConfig, NBackConfig, Trace, batch_fitness,
                            evaluate, evaluate_blockcatch, evaluate_nback,
                            filter_trace, task_config_from_dict,
                            task_config_to_dict, window_mask)

from _builders import (blockcatch_oracle, constant_brain, sensor_follower,
                       shift_register)

BC = BlockCatchConfig()
POLICIES = {
    "immobile": ((0, 0), lambda l, r: (0, 0)),
    "left": ((1, 0), lambda l, r: (1, 0)),
    "right": ((0, 1), lambda l, r: (0, 1)),
    "both": ((1, 1), lambda l, r: (1, 1)),
}


def test_shift_register_is_perfect():
    fitness, trace = evaluate_nback(shift_register())
    assert fitness == 1.0
    assert trace.n_rows == 25 * 33


def test_constant_zero_brain_near_half():
    fitness, _ = evaluate_nback(MarkovBrain(NBackConfig().io))
    assert abs(fitness - 0.5) <= 0.05


def test_echo_brain_near_half():
    io = NBackConfig().io
    echo = MarkovBrain(io, [Gate((0,), (j,), (0, 1)) for j in range(5)])
    fitness, _ = evaluate_nback(echo)
    assert abs(fitness - 0.5) <= 0.05


def test_nback_trace_layout():
    _, trace = evaluate_nback(shift_register())
    assert trace.columns[:2] == ["lifetime", "t"]
    assert trace.columns[2:11] == ["t0_i0"] + [f"t0_m{k}" for k in range(8)]
    assert trace.feature_columns() == [f"f_lag{k}" for k in (1, 3, 5, 7, 8)]
    assert trace.columns[-1] == "scored"
    assert trace.column("scored").sum() == 25 * 25
    # Expected bits are the input lagged within the lifetime.
    inp = trace.column("t0_i0").reshape(25, 33)
    lag3 = trace.column("f_lag3").reshape(25, 33)
    assert np.array_equal(lag3[:, 3:], inp[:, :-3])
    assert np.all(lag3[:, :3] == 0)
    # Memory written at T1 reappears at T0 on the next step.
    t1 = trace.column("t1_m4").reshape(25, 33)
    t0 = trace.column("t0_m4").reshape(25, 33)
    assert np.array_equal(t0[:, 1:], t1[:, :-1])
    assert np.all(t0[:, 0] == 0)


def test_nback_strings_depend_only_on_seed():
    a = NBackConfig(seed=4).strings()
    assert np.array_equal(a, NBackConfig(seed=4).strings())
    assert not np.array_equal(a, NBackConfig(seed=5).strings())


def test_nback_config_validation():
    with pytest.raises(ConfigurationError):
        NBackConfig(output_set=(1, 9))


def test_io_mismatch():
    with pytest.raises(ConfigurationError):
        evaluate_nback(MarkovBrain(BrainIO(2, 2)))
    with pytest.raises(ConfigurationError):
        evaluate_blockcatch(MarkovBrain(BrainIO(1, 5)))


@pytest.mark.parametrize("name", sorted(POLICIES))
def test_blockcatch_matches_oracle(name):
    outputs, policy = POLICIES[name]
    brain = constant_brain(BC.io, outputs)
    fitness, trace = evaluate_blockcatch(brain, BC)
    assert fitness == blockcatch_oracle(policy, BC.blocks)
    assert trace.n_rows == 120 * 32


def test_reactive_agent_matches_oracle():
    fitness, _ = evaluate_blockcatch(sensor_follower(BC.io), BC)
    assert fitness == blockcatch_oracle(lambda l, r: (l, r), BC.blocks)
    wide = BlockCatchConfig(agent_start=7)
    fitness, _ = evaluate_blockcatch(sensor_follower(wide.io), wide)
    assert fitness == blockcatch_oracle(lambda l, r: (l, r), wide.blocks, start=7)


@pytest.mark.parametrize("seed", range(5))
def test_complement_symmetry(seed):
    rng = np.random.default_rng(seed)
    tables = rng.integers(0, 1 << BC.io.n_t1, size=(4, 1 << BC.io.n_t0))
    f = batch_fitness(tables, BC.io, BC)
    g = batch_fitness(tables, BC.io, BC.flipped())
    # Exact: both are k/120 and (120 - k)/120.
    assert np.array_equal(np.round(f * 120), 120 - np.round(g * 120))
    assert np.all(f + g == 1.0)


def test_blockcatch_trace_features():
    _, trace = evaluate_blockcatch(constant_brain(BC.io, (0, 0)), BC)
    feats = trace.feature_columns()
    for base in ("f_catch", "f_left", "f_size2", "f_size3", "f_size4"):
        assert base in feats
    assert "f_catch_left" in feats
    assert "f_size2_size3" not in feats   # never both
    for c in feats:
        assert set(np.unique(trace.column(c))) <= {0, 1}
    lt = trace.column("lifetime")
    assert np.all(np.diff(lt) >= 0)
    steps = trace.column("t").reshape(120, 32)
    assert np.all(steps == np.arange(32))
    assert trace.column("scored").sum() == 120


def test_per_column_sensor_variant():
    cfg = BlockCatchConfig(per_column_sensors=True)
    assert cfg.io.n_inputs == 4
    fitness, trace = evaluate_blockcatch(constant_brain(cfg.io, (0, 0)), cfg)
    assert fitness == blockcatch_oracle(lambda l, r: (0, 0), cfg.blocks)
    assert "t0_i3" in trace.columns


def test_batch_matches_single():
    rng = np.random.default_rng(3)
    for cfg in (NBackConfig(seed=2), BC):
        tables = rng.integers(0, 1 << cfg.io.n_t1, size=(3, 1 << cfg.io.n_t0))
        batch = batch_fitness(tables, cfg.io, cfg)
        for k in range(3):
            brain = MarkovBrain(cfg.io)
            brain.__dict__["transition_table"] = tables[k]
            assert evaluate(brain, cfg)[0] == batch[k]


def test_filter_trace():
    _, trace = evaluate_blockcatch(constant_brain(BC.io, (1, 0)), BC)
    late = filter_trace(trace, 0.25)
    assert late.n_rows == 120 * 8
    assert np.all(late.column("t").reshape(120, 8) == np.arange(24, 32))
    assert np.array_equal(filter_trace(trace, 1.0).data, trace.data)
    assert np.array_equal(np.unique(late.column("lifetime")), np.arange(120))
    with pytest.raises(UsageError):
        window_mask(trace.column("lifetime"), 0.0)
    with pytest.raises(UsageError):
        window_mask(trace.column("lifetime"), 1.01)


def test_trace_csv_round_trip(tmp_path):
    _, trace = evaluate_nback(shift_register())
    p = tmp_path / "trace.csv"
    trace.save(p)
    back = Trace.load(p)
    assert back.columns == trace.columns
    assert np.array_equal(back.data, trace.data)
    assert back.to_csv() == trace.to_csv()


def test_config_dict_round_trip():
    for cfg in (NBackConfig(seed=9), BlockCatchConfig(agent_start=3)):
        assert task_config_from_dict(task_config_to_dict(cfg)) == cfg
    with pytest.raises(ConfigurationError):
        task_config_from_dict({"name": "maze"})
