"""NBack and Block Catch environments, plus the state-trace format.

Both evaluators run every lifetime of one brain in lock-step, looking up
each update in the brain's transition table.  Traces hold binarized T0/T1
states and world features, one row per update.

Trace CSV columns, in order: ``lifetime, t``, T0 columns (``t0_i*`` then
``t0_m*``), T1 columns (``t1_o*`` then ``t1_m*``), feature columns
(``f_*``), ``scored``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .brains import Brain, BrainIO, ConfigurationError
from .infotheory import StateTable, UsageError


@dataclass(frozen=True)
class NBackConfig:
    output_set: tuple = (1, 3, 5, 7, 8)
    lifetimes: int = 25
    string_length: int = 33
    seed_discard: int = 8
    seed: int = 0

    def __post_init__(self):
        if max(self.output_set) > self.seed_discard:
            raise ConfigurationError("largest lag exceeds the seeding period")
        if self.string_length <= self.seed_discard:
            raise ConfigurationError("string shorter than the seeding period")

    @property
    def io(self) -> BrainIO:
        return BrainIO(1, len(self.output_set))

    def strings(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.integers(0, 2, size=(self.lifetimes, self.string_length),
                            dtype=np.int64)


# (size, direction, catch); direction -1 drifts left, +1 right.
DEFAULT_BLOCKS = (
    (4, -1, False), (4, +1, False),
    (3, -1, False), (3, +1, True),
    (2, -1, True), (2, +1, True),
)


@dataclass(frozen=True)
class BlockCatchConfig:
    width: int = 20
    height: int = 32
    blocks: tuple = DEFAULT_BLOCKS
    sensor_width: int = 2
    blind_width: int = 2
    per_column_sensors: bool = False
    agent_start: int = 0

    @property
    def body_width(self) -> int:
        return 2 * self.sensor_width + self.blind_width

    @property
    def io(self) -> BrainIO:
        n_in = 2 * self.sensor_width if self.per_column_sensors else 2
        return BrainIO(n_in, 2)

    @property
    def n_lifetimes(self) -> int:
        return len(self.blocks) * self.width

    def flipped(self) -> "BlockCatchConfig":
        """Same world with every catch/avoid label inverted."""
        blocks = tuple((s, d, not c) for s, d, c in self.blocks)
        return BlockCatchConfig(self.width, self.height, blocks,
                                self.sensor_width, self.blind_width,
                                self.per_column_sensors, self.agent_start)


@dataclass
class Trace:
    """Per-update state log; ``data`` is an integer array, one column per name."""

    columns: list
    data: np.ndarray = field(repr=False)
    task: str = ""

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def n_rows(self) -> int:
        return self.data.shape[0]

    def prefixed(self, prefix: str) -> list:
        return [c for c in self.columns if c.startswith(prefix)]

    def t0_nodes(self) -> dict:
        """Node id -> column name for T0 state columns."""
        return {c[3:]: c for c in self.prefixed("t0_")}

    def t1_nodes(self) -> dict:
        return {c[3:]: c for c in self.prefixed("t1_")}

    def feature_columns(self) -> list:
        return self.prefixed("f_")

    def to_table(self, columns: Sequence[str] | None = None) -> StateTable:
        names = list(self.columns if columns is None else columns)
        idx = [self.columns.index(c) for c in names]
        rows = self.data[:, idx]
        cards = [max(int(rows[:, k].max()) + 1, 2) if len(rows) else 2
                 for k in range(len(idx))]
        return StateTable(tuple(names), tuple(cards), rows)

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.data.tolist())
        return buf.getvalue().encode()

    @classmethod
    def from_csv(cls, data: bytes | str, task: str = "") -> "Trace":
        text = data.decode() if isinstance(data, bytes) else data
        rows = list(csv.reader(text.splitlines()))
        header, body = rows[0], [r for r in rows[1:] if r]
        arr = np.array(body, dtype=np.int64).reshape(len(body), len(header))
        return cls(header, arr, task)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, "rb") as fh:
            return cls.from_csv(fh.read())


def window_mask(lifetimes: np.ndarray, window: float) -> np.ndarray:
    """Boolean mask keeping the trailing ``ceil(window * steps)`` rows of
    each lifetime.  Rows of a lifetime must be in step order."""
    if not (0.0 < window <= 1.0):
        raise UsageError("window must lie in (0, 1]")
    lifetimes = np.asarray(lifetimes)
    keep = np.zeros(lifetimes.shape[0], dtype=bool)
    for lt in np.unique(lifetimes):
        rows = np.flatnonzero(lifetimes == lt)
        # Small slack so 0.25 * 32 is not pushed to 9 by rounding.
        n_keep = math.ceil(window * rows.shape[0] - 1e-9)
        keep[rows[rows.shape[0] - n_keep:]] = True
    return keep


def filter_trace(trace: Trace, window: float) -> Trace:
    """Keep only the trailing ``window`` fraction of each lifetime."""
    mask = window_mask(trace.column("lifetime"), window)
    return Trace(list(trace.columns), trace.data[mask], trace.task)


def _state_columns(io_: BrainIO) -> list:
    return ([f"t0_{n}" for n in io_.t0_ids] + [f"t1_{n}" for n in io_.t1_ids])


def _unpack(values: np.ndarray, n_bits: int) -> np.ndarray:
    return (values[..., None] >> np.arange(n_bits)) & 1


def _check_io(brain_io: BrainIO, task_io: BrainIO) -> None:
    if (brain_io.n_inputs, brain_io.n_outputs) != (task_io.n_inputs,
                                                   task_io.n_outputs):
        raise ConfigurationError(
            f"brain has {brain_io.n_inputs} inputs/{brain_io.n_outputs} "
            f"outputs, task needs {task_io.n_inputs}/{task_io.n_outputs}")


# -- NBack ---------------------------------------------------------------------

def _nback_run(tables: np.ndarray, io_: BrainIO, config: NBackConfig):
    """Simulate stacked transition tables; returns (t0, t1, bits) states.

    ``tables`` has shape (n_brains, 2^|T0|).  Returned state arrays are
    packed integers of shape (n_brains, lifetimes, steps).
    """
    bits = config.strings()
    n_b, n_lt, n_t = tables.shape[0], config.lifetimes, config.string_length
    mem = np.zeros((n_b, n_lt), dtype=np.int64)
    t0 = np.empty((n_b, n_lt, n_t), dtype=np.int64)
    t1 = np.empty_like(t0)
    rows = np.arange(n_b)[:, None]
    for t in range(n_t):
        s0 = bits[None, :, t] | (mem << io_.n_inputs)
        s1 = tables[rows, s0]
        t0[:, :, t] = s0
        t1[:, :, t] = s1
        mem = s1 >> io_.n_outputs
    return t0, t1, bits


def _nback_expected(bits: np.ndarray, config: NBackConfig) -> np.ndarray:
    """Expected output bits, shape (lifetimes, steps, n_outputs); 0 before start."""
    n_lt, n_t = bits.shape
    out = np.zeros((n_lt, n_t, len(config.output_set)), dtype=np.int64)
    for j, lag in enumerate(config.output_set):
        out[:, lag:, j] = bits[:, :n_t - lag]
    return out


def nback_fitness(tables: np.ndarray, io_: BrainIO,
                  config: NBackConfig) -> np.ndarray:
    """Fitness of each stacked transition table on NBack."""
    _check_io(io_, config.io)
    _, t1, bits = _nback_run(tables, io_, config)
    outputs = _unpack(t1 & ((1 << io_.n_outputs) - 1), io_.n_outputs)
    expected = _nback_expected(bits, config)[None]
    scored = slice(config.seed_discard, None)
    hits = outputs[:, :, scored] == expected[:, :, scored]
    return hits.reshape(tables.shape[0], -1).mean(axis=1)


def evaluate_nback(brain: Brain, config: NBackConfig = NBackConfig()):
    """Score ``brain`` on NBack; returns ``(fitness, trace)``."""
    io_ = brain.io
    _check_io(io_, config.io)
    tables = brain.transition_table[None]
    t0, t1, bits = _nback_run(tables, io_, config)
    t0, t1 = t0[0], t1[0]
    n_lt, n_t = bits.shape
    outputs = _unpack(t1 & ((1 << io_.n_outputs) - 1), io_.n_outputs)
    expected = _nback_expected(bits, config)
    hits = (outputs == expected)[:, config.seed_discard:]
    fitness = float(hits.mean())

    lifetime = np.repeat(np.arange(n_lt), n_t)
    step = np.tile(np.arange(n_t), n_lt)
    scored = (step >= config.seed_discard).astype(np.int64)
    t0_bits = _unpack(t0.reshape(-1), io_.n_t0)
    t1_bits = _unpack(t1.reshape(-1), io_.n_t1)
    features = expected.reshape(-1, len(config.output_set))
    data = np.column_stack([lifetime, step, t0_bits, t1_bits, features, scored])
    columns = (["lifetime", "t"] + _state_columns(io_)
               + [f"f_lag{lag}" for lag in config.output_set] + ["scored"])
    return fitness, Trace(columns, data.astype(np.int64), "nback")


# -- Block Catch ---------------------------------------------------------------

def _blockcatch_world(config: BlockCatchConfig):
    """Per-lifetime block size, direction, catch label and start column."""
    sizes, dirs, catch, starts = [], [], [], []
    for size, direction, should_catch in config.blocks:
        for p in range(config.width):
            sizes.append(size)
            dirs.append(direction)
            catch.append(should_catch)
            starts.append(p)
    return (np.array(sizes), np.array(dirs), np.array(catch, dtype=bool),
            np.array(starts))


def _occupied(col, block, size, width):
    return np.mod(col - block, width) < size


def _sensor_bits(agent, block, size, config: BlockCatchConfig):
    w, sw = config.width, config.sensor_width
    left_cols = [agent + k for k in range(sw)]
    right_cols = [agent + sw + config.blind_width + k for k in range(sw)]
    if config.per_column_sensors:
        return [_occupied(c, block, size, w).astype(np.int64)
                for c in left_cols + right_cols]
    left = np.zeros(agent.shape, dtype=bool)
    right = np.zeros(agent.shape, dtype=bool)
    for c in left_cols:
        left |= _occupied(c, block, size, w)
    for c in right_cols:
        right |= _occupied(c, block, size, w)
    return [left.astype(np.int64), right.astype(np.int64)]


def _blockcatch_run(tables: np.ndarray, io_: BrainIO, config: BlockCatchConfig):
    sizes, dirs, catch, starts = _blockcatch_world(config)
    n_b, n_lt, n_t = tables.shape[0], sizes.shape[0], config.height
    shape = (n_b, n_lt)
    agent = np.full(shape, config.agent_start % config.width, dtype=np.int64)
    block = np.broadcast_to(starts, shape).astype(np.int64)
    size = np.broadcast_to(sizes, shape)
    mem = np.zeros(shape, dtype=np.int64)
    t0 = np.empty((n_b, n_lt, n_t), dtype=np.int64)
    t1 = np.empty_like(t0)
    rows = np.arange(n_b)[:, None]
    for t in range(n_t):
        s0 = mem << io_.n_inputs
        for k, bit in enumerate(_sensor_bits(agent, block, size, config)):
            s0 |= bit << k
        s1 = tables[rows, s0]
        t0[:, :, t] = s0
        t1[:, :, t] = s1
        mem = s1 >> io_.n_outputs
        go_left = (s1 & 1).astype(bool)
        go_right = ((s1 >> 1) & 1).astype(bool)
        move = np.where(go_left & ~go_right, -1, np.where(go_right & ~go_left, 1, 0))
        agent = np.mod(agent + move, config.width)
        block = np.mod(block + dirs, config.width)
    # Caught when any block column falls inside the agent's body.
    caught = np.zeros(shape, dtype=bool)
    for k in range(int(sizes.max())):
        inside = np.mod(block + k - agent, config.width) < config.body_width
        caught |= inside & (k < size)
    return t0, t1, caught, (sizes, dirs, catch)


def blockcatch_fitness(tables: np.ndarray, io_: BrainIO,
                       config: BlockCatchConfig) -> np.ndarray:
    _check_io(io_, config.io)
    _, _, caught, (_, _, catch) = _blockcatch_run(tables, io_, config)
    return (caught == catch[None]).mean(axis=1)


def _blockcatch_features(sizes, dirs, catch) -> dict:
    base = {
        "catch": catch.astype(np.int64),
        "left": (dirs < 0).astype(np.int64),
        "size2": (sizes == 2).astype(np.int64),
        "size3": (sizes == 3).astype(np.int64),
        "size4": (sizes == 4).astype(np.int64),
    }
    feats = dict(base)
    names = list(base)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            combo = base[names[a]] & base[names[b]]
            # Constant combinations (e.g. two sizes at once) carry nothing.
            if combo.min() != combo.max():
                feats[f"{names[a]}_{names[b]}"] = combo
    return feats


def evaluate_blockcatch(brain: Brain,
                        config: BlockCatchConfig = BlockCatchConfig()):
    """Score ``brain`` on Block Catch; returns ``(fitness, trace)``.

    The ``scored`` column marks the final update of each lifetime, where the
    catch decision is taken.
    """
    io_ = brain.io
    _check_io(io_, config.io)
    tables = brain.transition_table[None]
    t0, t1, caught, (sizes, dirs, catch) = _blockcatch_run(tables, io_, config)
    t0, t1 = t0[0], t1[0]
    fitness = float((caught[0] == catch).mean())

    n_lt, n_t = t0.shape
    lifetime = np.repeat(np.arange(n_lt), n_t)
    step = np.tile(np.arange(n_t), n_lt)
    scored = (step == n_t - 1).astype(np.int64)
    feats = _blockcatch_features(sizes, dirs, catch)
    feat_cols = [np.repeat(v, n_t) for v in feats.values()]
    data = np.column_stack([lifetime, step,
                            _unpack(t0.reshape(-1), io_.n_t0),
                            _unpack(t1.reshape(-1), io_.n_t1),
                            *feat_cols, scored])
    columns = (["lifetime", "t"] + _state_columns(io_)
               + [f"f_{k}" for k in feats] + ["scored"])
    return fitness, Trace(columns, data.astype(np.int64), "blockcatch")


# -- dispatch ------------------------------------------------------------------

def evaluate(brain: Brain, config):
    if isinstance(config, NBackConfig):
        return evaluate_nback(brain, config)
    if isinstance(config, BlockCatchConfig):
        return evaluate_blockcatch(brain, config)
    raise ConfigurationError(f"unknown task config {type(config).__name__}")


def batch_fitness(tables: np.ndarray, io_: BrainIO, config) -> np.ndarray:
    """Fitness for a stack of transition tables of brains sharing ``io_``."""
    if isinstance(config, NBackConfig):
        return nback_fitness(tables, io_, config)
    if isinstance(config, BlockCatchConfig):
        return blockcatch_fitness(tables, io_, config)
    raise ConfigurationError(f"unknown task config {type(config).__name__}")


def task_config_from_dict(d: dict):
    """Build a task config from ``{"name": "nback"|"blockcatch", ...}``."""
    d = dict(d)
    name = d.pop("name", None)
    if name == "nback":
        if "output_set" in d:
            d["output_set"] = tuple(d["output_set"])
        return NBackConfig(**d)
    if name == "blockcatch":
        if "blocks" in d:
            d["blocks"] = tuple((int(s), int(dr), bool(c)) for s, dr, c in d["blocks"])
        return BlockCatchConfig(**d)
    raise ConfigurationError(f"unknown task {name!r}")


def task_config_to_dict(config) -> dict:
    from dataclasses import asdict
    d = asdict(config)
    d["name"] = "nback" if isinstance(config, NBackConfig) else "blockcatch"
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
    return d
