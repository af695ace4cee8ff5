"""Genome-decoded digital brains: recurrent networks and Markov Brains.

A brain maps its T0 state (inputs followed by memory) to a T1 state
(outputs followed by new memory).  Memory written at T1 is discretized
(``> 0`` becomes 1, else 0) and presented at T0 on the next update.

Node ids used throughout: ``i<k>`` inputs, ``m<k>`` memory, ``o<k>`` outputs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .infotheory import UsageError

GENOME_LENGTH = 2000
SITE_VALUES = 256
N_MEMORY = 8
START_CODON = (42, 213)
MAX_GATE_INPUTS = 4
MAX_GATE_OUTPUTS = 4


class ConfigurationError(ValueError):
    """A brain, genome or task configuration is inconsistent."""


@dataclass(frozen=True)
class BrainIO:
    n_inputs: int
    n_outputs: int
    n_memory: int = N_MEMORY

    @property
    def n_t0(self) -> int:
        return self.n_inputs + self.n_memory

    @property
    def n_t1(self) -> int:
        return self.n_outputs + self.n_memory

    @property
    def t0_ids(self) -> list:
        return ([f"i{k}" for k in range(self.n_inputs)]
                + [f"m{k}" for k in range(self.n_memory)])

    @property
    def t1_ids(self) -> list:
        return ([f"o{k}" for k in range(self.n_outputs)]
                + [f"m{k}" for k in range(self.n_memory)])


def check_genome(genome, length: int = GENOME_LENGTH) -> np.ndarray:
    g = np.asarray(genome)
    if g.ndim != 1 or g.shape[0] != length:
        raise ConfigurationError(f"genome must have exactly {length} sites")
    if g.size and (g.min() < 0 or g.max() >= SITE_VALUES):
        raise ConfigurationError("genome sites must lie in [0, 255]")
    return g.astype(np.uint8)


def random_genome(rng: np.random.Generator, length: int = GENOME_LENGTH,
                  start_codons: int = 0,
                  codon: tuple = START_CODON) -> np.ndarray:
    """Uniform random sites, optionally seeded with ``start_codons`` codons."""
    g = rng.integers(0, SITE_VALUES, size=length, dtype=np.uint8)
    for pos in rng.integers(0, length, size=start_codons):
        g[pos] = codon[0]
        g[(pos + 1) % length] = codon[1]
    return g


def genome_hash(genome) -> str:
    return hashlib.sha256(np.asarray(genome, dtype=np.uint8).tobytes()).hexdigest()[:16]


def discretize(values) -> np.ndarray:
    """Map values ``> 0`` to 1 and everything else to 0."""
    return (np.asarray(values) > 0).astype(np.int64)


_STATE_BITS: dict = {}


def _state_bits(n_bits: int) -> np.ndarray:
    bits = _STATE_BITS.get(n_bits)
    if bits is None:
        states = np.arange(1 << n_bits, dtype=np.int64)
        bits = (states[:, None] >> np.arange(n_bits)) & 1
        bits.setflags(write=False)
        _STATE_BITS[n_bits] = bits
    return bits


class Brain:
    """Shared behaviour: memory hand-off, transition tables, dumps."""

    architecture = "abstract"

    def __init__(self, io: BrainIO):
        self.io = io
        self.memory = np.zeros(io.n_memory, dtype=np.int64)

    def update(self, t0) -> np.ndarray:
        raise NotImplementedError

    def _check_t0(self, t0) -> np.ndarray:
        t0 = np.asarray(t0)
        if t0.shape != (self.io.n_t0,):
            raise UsageError(
                f"T0 must have {self.io.n_t0} values, got shape {t0.shape}")
        return t0

    def reset(self) -> None:
        self.memory = np.zeros(self.io.n_memory, dtype=np.int64)

    def step(self, inputs) -> np.ndarray:
        """One update with the stored memory; returns binarized outputs."""
        inputs = np.asarray(inputs, dtype=np.int64)
        t1 = discretize(self.update(np.concatenate([inputs, self.memory])))
        self.memory = t1[self.io.n_outputs:]
        return t1[:self.io.n_outputs]

    @cached_property
    def transition_table(self) -> np.ndarray:
        """Binarized T1 for every binary T0, packed little-endian.

        Entry ``s`` holds ``sum(t1[j] << j)`` for the T0 with ``t0[k] = (s >> k) & 1``.
        """
        bits = _state_bits(self.io.n_t0)
        t1 = discretize(self._update_many(bits))
        return (t1 << np.arange(self.io.n_t1)).sum(axis=1).astype(np.int64)

    def _update_many(self, t0_rows: np.ndarray) -> np.ndarray:
        return np.array([self.update(r) for r in t0_rows])

    def connectome(self) -> set:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"architecture": self.architecture,
                "io": {"n_inputs": self.io.n_inputs,
                       "n_outputs": self.io.n_outputs,
                       "n_memory": self.io.n_memory},
                "connectome": sorted([list(e) for e in self.connectome()])}


class RnnBrain(Brain):
    """Fully connected single-layer recurrent network with tanh units."""

    architecture = "rnn"

    def __init__(self, io: BrainIO, weights, biases):
        super().__init__(io)
        self.weights = np.asarray(weights, dtype=float)
        self.biases = np.asarray(biases, dtype=float)
        if self.weights.shape != (io.n_t1, io.n_t0):
            raise ConfigurationError("weight matrix shape does not match IO")
        if self.biases.shape != (io.n_t1,):
            raise ConfigurationError("bias vector shape does not match IO")

    def update(self, t0) -> np.ndarray:
        t0 = self._check_t0(t0).astype(float)
        return np.tanh(self.biases + self.weights @ t0)

    def _update_many(self, t0_rows):
        return np.tanh(self.biases + t0_rows.astype(float) @ self.weights.T)

    def connectome(self) -> set:
        t0, t1 = self.io.t0_ids, self.io.t1_ids
        rows, cols = np.nonzero(np.abs(self.weights) > 0)
        return {(t0[c], t1[r]) for r, c in zip(rows, cols)}

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["weights"] = self.weights.tolist()
        d["biases"] = self.biases.tolist()
        return d


@dataclass(frozen=True)
class Gate:
    """Deterministic lookup-table gate.

    ``table[p]`` is the output pattern for input pattern ``p``, where input
    wire ``k`` contributes bit ``k`` of ``p`` and bit ``j`` of the entry
    drives output wire ``j``.
    """

    inputs: tuple
    outputs: tuple
    table: tuple = field(repr=False)

    def __post_init__(self):
        if not 1 <= len(self.inputs) <= MAX_GATE_INPUTS:
            raise ConfigurationError("gate needs 1-4 input wires")
        if not 1 <= len(self.outputs) <= MAX_GATE_OUTPUTS:
            raise ConfigurationError("gate needs 1-4 output wires")
        if len(self.table) != 1 << len(self.inputs):
            raise ConfigurationError("gate table must have 2^n_inputs entries")
        if any(not 0 <= v < (1 << len(self.outputs)) for v in self.table):
            raise ConfigurationError("gate table entry wider than its outputs")


class MarkovBrain(Brain):
    """Network of lookup-table gates; writers to one T1 node are OR-combined."""

    architecture = "markov"

    def __init__(self, io: BrainIO, gates=()):
        super().__init__(io)
        self.gates = list(gates)
        for g in self.gates:
            if any(not 0 <= w < io.n_t0 for w in g.inputs):
                raise ConfigurationError("gate input wire out of range")
            if any(not 0 <= w < io.n_t1 for w in g.outputs):
                raise ConfigurationError("gate output wire out of range")

    def update(self, t0) -> np.ndarray:
        t0 = self._check_t0(t0).astype(np.int64)
        if np.any((t0 != 0) & (t0 != 1)):
            raise UsageError("Markov Brain T0 values must be 0 or 1")
        return self._update_many(t0[None, :])[0]

    def _update_many(self, t0_rows):
        t1 = np.zeros((t0_rows.shape[0], self.io.n_t1), dtype=np.int64)
        for g in self.gates:
            pattern = np.zeros(t0_rows.shape[0], dtype=np.int64)
            for k, w in enumerate(g.inputs):
                pattern |= t0_rows[:, w] << k
            out = np.asarray(g.table, dtype=np.int64)[pattern]
            for j, w in enumerate(g.outputs):
                t1[:, w] |= (out >> j) & 1
        return t1

    def connectome(self) -> set:
        t0, t1 = self.io.t0_ids, self.io.t1_ids
        return {(t0[s], t1[t]) for g in self.gates
                for s in g.inputs for t in g.outputs}

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["gates"] = [{"inputs": list(g.inputs), "outputs": list(g.outputs),
                       "table": list(g.table)} for g in self.gates]
        return d


def decode_rnn(genome, io: BrainIO) -> RnnBrain:
    """Weights and bias per T1 node, row-major, each site v -> 2 v / 255 - 1."""
    g = check_genome(genome, len(genome))
    n_params = io.n_t1 * (io.n_t0 + 1)
    if n_params > g.shape[0]:
        raise ConfigurationError(
            f"RNN needs {n_params} sites, genome has {g.shape[0]}")
    values = g[:n_params].astype(float) / 255.0 * 2.0 - 1.0
    block = values.reshape(io.n_t1, io.n_t0 + 1)
    return RnnBrain(io, block[:, :-1], block[:, -1])


def decode_markov(genome, io: BrainIO, codon: tuple = START_CODON) -> MarkovBrain:
    """Gates from every start codon, reading the genome circularly.

    After the codon: input count (site % 4 + 1), output count (site % 4 + 1),
    input wires (site % |T0|), output wires (site % |T1|), then one site per
    table entry whose low bits are the gate's outputs.  Gate descriptions
    may overlap.
    """
    g = np.asarray(genome, dtype=np.int64)
    n = g.shape[0]
    starts = np.flatnonzero((g == codon[0]) & (np.roll(g, -1) == codon[1]))
    gates = []
    for p in starts:
        c = p + 2
        n_in = int(g[c % n]) % MAX_GATE_INPUTS + 1
        n_out = int(g[(c + 1) % n]) % MAX_GATE_OUTPUTS + 1
        c += 2
        ins = tuple(int(g[(c + k) % n]) % io.n_t0 for k in range(n_in))
        c += n_in
        outs = tuple(int(g[(c + k) % n]) % io.n_t1 for k in range(n_out))
        c += n_out
        mask = (1 << n_out) - 1
        table = tuple(int(g[(c + k) % n]) & mask for k in range(1 << n_in))
        gates.append(Gate(ins, outs, table))
    return MarkovBrain(io, gates)


@numba.njit(cache=True, nogil=True)
def _markov_table_kernel(g, n_t0, n_t1, c0, c1):
    n = g.shape[0]
    n_states = 1 << n_t0
    t1 = np.zeros(n_states, dtype=np.int64)
    ins = np.empty(MAX_GATE_INPUTS, dtype=np.int64)
    packed = np.empty(1 << MAX_GATE_INPUTS, dtype=np.int64)
    for p in range(n):
        if g[p] != c0 or g[(p + 1) % n] != c1:
            continue
        c = p + 2
        n_in = g[c % n] % MAX_GATE_INPUTS + 1
        n_out = g[(c + 1) % n] % MAX_GATE_OUTPUTS + 1
        c += 2
        for k in range(n_in):
            ins[k] = g[(c + k) % n] % n_t0
        c += n_in
        for e in range(1 << n_in):
            packed[e] = 0
        for j in range(n_out):
            w = g[(c + j) % n] % n_t1
            for e in range(1 << n_in):
                entry = g[(c + n_out + e) % n]
                packed[e] |= ((entry >> j) & 1) << w
        for s in range(n_states):
            pattern = 0
            for k in range(n_in):
                pattern |= ((s >> ins[k]) & 1) << k
            t1[s] |= packed[pattern]
    return t1


def markov_table(genome, io: BrainIO, codon: tuple = START_CODON) -> np.ndarray:
    """Transition table of ``decode_markov(genome, io)`` without building gates.

    Compiled for the evolution hot path; must agree with the decoded brain.
    """
    g = np.ascontiguousarray(genome, dtype=np.int64)
    return _markov_table_kernel(g, io.n_t0, io.n_t1, codon[0], codon[1])


def transition_table(genome, io: BrainIO, kind: str) -> np.ndarray:
    if kind == "markov":
        return markov_table(genome, io)
    return decode(genome, io, kind).transition_table


def decode(genome, io: BrainIO, kind: str) -> Brain:
    if kind == "markov":
        return decode_markov(genome, io)
    if kind == "rnn":
        return decode_rnn(genome, io)
    raise ConfigurationError(f"unknown brain kind {kind!r}")


def brain_from_dict(d: dict) -> Brain:
    """Rebuild a brain from :meth:`Brain.to_dict` output."""
    io = BrainIO(**d["io"])
    if d["architecture"] == "markov":
        gates = [Gate(tuple(x["inputs"]), tuple(x["outputs"]), tuple(x["table"]))
                 for x in d["gates"]]
        return MarkovBrain(io, gates)
    if d["architecture"] == "rnn":
        return RnnBrain(io, d["weights"], d["biases"])
    raise ConfigurationError(f"unknown architecture {d['architecture']!r}")
