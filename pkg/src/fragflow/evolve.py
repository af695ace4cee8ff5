"""Generational evolution with tournament selection and line-of-descent tracking.

Randomness is split into independent streams keyed by
``(seed, replicate, generation, purpose, index)`` so a run is reproducible
whatever the evaluation parallelism.
"""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .brains import (GENOME_LENGTH, SITE_VALUES, ConfigurationError,
                     check_genome, decode, genome_hash, random_genome,
                     transition_table)
from .infotheory import UsageError
from .tasks import NBackConfig, batch_fitness, task_config_to_dict

# Stream purposes.
_SELECT, _MUTATE, _INIT, _TASK = 0, 1, 2, 3


@dataclass(frozen=True)
class EaConfig:
    population: int = 100
    tournament: int = 5
    generations: int = 2000
    point_rate: float = 0.005
    offset_rate: float = 0.005
    offset_range: int = 10
    copy_rate: float = 0.00005
    copy_min: int = 8
    copy_max: int = 500
    genome_length: int = GENOME_LENGTH
    # Start codons planted in each initial genome (Markov Brains only).
    initial_gates: int = 16
    seed: int = 0
    replicate: int = 0

    def __post_init__(self):
        for name in ("point_rate", "offset_rate", "copy_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if not 1 <= self.copy_min <= self.copy_max <= self.genome_length:
            raise ConfigurationError("copy segment bounds must fit the genome")
        if self.population < 1 or self.tournament < 1:
            raise ConfigurationError("population and tournament must be >= 1")
        if self.generations < 0:
            raise ConfigurationError("generations must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "EaConfig":
        return cls(**d)


def stream(ea: EaConfig, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=(ea.seed, ea.replicate),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def mutate(genome: np.ndarray, ea: EaConfig,
           rng: np.random.Generator) -> np.ndarray:
    """Point, offset, then copy-replace mutations; returns a new genome.

    Offsets are uniform in ``[-range, range]`` without zero and wrap mod 256.
    Each site starts a copy-replace event with ``copy_rate``; the segment
    length is uniform in ``[copy_min, copy_max]``, clamped to fit after the
    destination, and copied from a uniformly chosen source start.
    """
    g = np.array(genome, dtype=np.uint8, copy=True)
    n = g.shape[0]
    draws = rng.random((3, n))
    hit = np.flatnonzero(draws[0] < ea.point_rate)
    if hit.size:
        g[hit] = rng.integers(0, SITE_VALUES, size=hit.size, dtype=np.uint8)
    hit = np.flatnonzero(draws[1] < ea.offset_rate)
    if hit.size:
        # Uniform over [-range, -1] and [1, range].
        d = rng.integers(-ea.offset_range, ea.offset_range, size=hit.size)
        d[d >= 0] += 1
        g[hit] = np.mod(g[hit].astype(np.int64) + d, SITE_VALUES).astype(np.uint8)
    for dest in np.flatnonzero(draws[2] < ea.copy_rate):
        length = int(rng.integers(ea.copy_min, ea.copy_max + 1))
        length = min(length, n - int(dest))
        src = int(rng.integers(0, n - length + 1))
        g[dest:dest + length] = g[src:src + length].copy()
    return g


def tournament(fitness: np.ndarray, size: int,
               rng: np.random.Generator) -> int:
    """Index of the fittest of ``size`` entrants drawn with replacement."""
    entrants = rng.integers(0, fitness.shape[0], size=size)
    best = fitness[entrants].max()
    tied = np.unique(entrants[fitness[entrants] == best])
    if tied.shape[0] == 1:
        return int(tied[0])
    return int(tied[rng.integers(0, tied.shape[0])])


def population_fitness(genomes, kind: str, task_config) -> np.ndarray:
    io_ = task_config.io
    tables = np.stack([transition_table(g, io_, kind) for g in genomes])
    return batch_fitness(tables, io_, task_config)


def _chunk_fitness(args):
    genomes, kind, task_config = args
    return population_fitness(genomes, kind, task_config)


@dataclass
class History:
    """Lineage of one run: ``parents[g, k]`` indexes generation ``g - 1``."""

    parents: np.ndarray
    fitness: np.ndarray
    hashes: list
    final_population: list = field(default_factory=list, repr=False)

    @property
    def generations(self) -> int:
        return self.parents.shape[0] - 1

    def stats(self) -> list:
        return [(g, float(self.fitness[g].max()), float(self.fitness[g].mean()))
                for g in range(self.fitness.shape[0])]

    def final_index(self) -> int:
        """Fittest individual of the last generation, lowest index on ties."""
        return int(np.argmax(self.fitness[-1]))


def _generation_task(task_config, ea: EaConfig, generation: int):
    # Fresh NBack strings each generation, shared by the whole population.
    if isinstance(task_config, NBackConfig):
        seed = int(stream(ea, generation, _TASK).integers(0, 2 ** 63 - 1))
        return replace(task_config, seed=seed ^ task_config.seed)
    return task_config


def run_evolution(ea: EaConfig, task_config, kind: str = "markov",
                  workers: int = 1, progress=None) -> History:
    """Evolve a population; returns the full lineage history.

    Each generation is evaluated, then replaced wholesale by mutated
    tournament winners.  The last population is evaluated as well, so the
    history holds ``generations + 1`` scored populations.
    """
    io_ = task_config.io
    if kind == "rnn":
        n_params = io_.n_t1 * (io_.n_t0 + 1)
        if n_params > ea.genome_length:
            raise ConfigurationError("genome too short for this RNN")
    elif kind != "markov":
        raise ConfigurationError(f"unknown brain kind {kind!r}")
    n_pop, n_gen = ea.population, ea.generations
    n_codons = ea.initial_gates if kind == "markov" else 0
    pop = [random_genome(stream(ea, 0, _INIT, k), ea.genome_length, n_codons)
           for k in range(n_pop)]
    parents = np.full((n_gen + 1, n_pop), -1, dtype=np.int64)
    fitness = np.zeros((n_gen + 1, n_pop))
    hashes = []

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for gen in range(n_gen + 1):
            task = _generation_task(task_config, ea, gen)
            if pool is None:
                fit = population_fitness(pop, kind, task)
            else:
                chunks = np.array_split(np.arange(n_pop), workers)
                jobs = [([pop[i] for i in c], kind, task) for c in chunks if len(c)]
                fit = np.concatenate(list(pool.map(_chunk_fitness, jobs)))
            fitness[gen] = fit
            hashes.append([genome_hash(g) for g in pop])
            if progress is not None:
                progress(gen, fit)
            if gen == n_gen:
                break
            sel = stream(ea, gen, _SELECT)
            chosen = [tournament(fit, ea.tournament, sel) for _ in range(n_pop)]
            pop = [mutate(pop[p], ea, stream(ea, gen, _MUTATE, k))
                   for k, p in enumerate(chosen)]
            parents[gen + 1] = chosen
    finally:
        if pool is not None:
            pool.shutdown()
    return History(parents, fitness, hashes, pop)


def reconstruct_lod(history: History, final: int | None = None) -> list:
    """Line of descent as ``[(hash, fitness), ...]`` from generation 0 forward."""
    n = history.parents.shape[0]
    if (history.fitness.shape[0] != n or len(history.hashes) != n
            or n == 0):
        raise UsageError("history is truncated")
    k = history.final_index() if final is None else int(final)
    path = []
    for g in range(n - 1, -1, -1):
        if not 0 <= k < history.fitness.shape[1]:
            raise UsageError(f"invalid parent index at generation {g}")
        path.append((history.hashes[g][k], float(history.fitness[g, k])))
        k = int(history.parents[g, k])
        if g > 0 and k < 0:
            raise UsageError(f"missing parent link at generation {g}")
    return path[::-1]


# -- run directory -------------------------------------------------------------

def write_run(out_dir, history: History, ea: EaConfig, task_config,
              kind: str) -> dict:
    """Write config snapshot, stats, lineage log, LOD and final brain.

    Returns the written paths keyed by role.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f) for k, f in (
        ("config", "config.json"), ("stats", "stats.csv"),
        ("lineage", "lineage.jsonl"), ("lod", "lod.json"),
        ("brain", "brain.json"))}

    snapshot = {"ea": asdict(ea), "task": task_config_to_dict(task_config),
                "brain": kind}
    with open(paths["config"], "w") as fh:
        json.dump(snapshot, fh, indent=1, sort_keys=True)
        fh.write("\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["generation", "max_fitness", "mean_fitness"])
    for g, mx, mean in history.stats():
        w.writerow([g, repr(mx), repr(mean)])
    with open(paths["stats"], "w") as fh:
        fh.write(buf.getvalue())

    with open(paths["lineage"], "w") as fh:
        for g in range(history.parents.shape[0]):
            fh.write(json.dumps({
                "generation": g,
                "parents": history.parents[g].tolist(),
                "hashes": history.hashes[g],
                "fitness": history.fitness[g].tolist()}) + "\n")

    final = history.final_index()
    genome = history.final_population[final]
    lod = reconstruct_lod(history, final)
    with open(paths["lod"], "w") as fh:
        json.dump({"brain": kind, "task": task_config_to_dict(task_config),
                   "final_index": final,
                   "path": [{"hash": h, "fitness": f} for h, f in lod],
                   "genome": check_genome(genome, len(genome)).tolist()},
                  fh, sort_keys=True)
        fh.write("\n")

    brain = decode(genome, task_config.io, kind)
    dump = brain.to_dict()
    dump["genome_hash"] = genome_hash(genome)
    with open(paths["brain"], "w") as fh:
        json.dump(dump, fh, sort_keys=True)
        fh.write("\n")
    return paths


def load_history(lineage_path) -> History:
    parents, fitness, hashes = [], [], []
    with open(lineage_path) as fh:
        for g, line in enumerate(fh):
            rec = json.loads(line)
            if rec["generation"] != g:
                raise UsageError("lineage log is out of order or truncated")
            parents.append(rec["parents"])
            fitness.append(rec["fitness"])
            hashes.append(rec["hashes"])
    return History(np.array(parents, dtype=np.int64), np.array(fitness), hashes)
