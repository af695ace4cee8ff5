"""Mutational robustness and its relation to flow complexity."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .brains import transition_table
from .evolve import EaConfig, mutate
from .infotheory import UsageError
from .tasks import batch_fitness


class UndefinedOffsetError(ValueError):
    """Mutation offset requested for an agent with a zero baseline score."""


def mutant_scores(genome, task_config, kind: str, n: int = 100, seed: int = 0,
                  ea: EaConfig = EaConfig(), first: int = 0) -> tuple:
    """Baseline score and the scores of ``n`` independent single mutants.

    Mutant ``k`` draws from its own stream keyed by ``(seed, k)``, for
    ``k`` in ``[first, first + n)``, so batches can be split or extended.
    """
    io_ = task_config.io
    baseline = float(batch_fitness(transition_table(genome, io_, kind)[None],
                                   io_, task_config)[0])
    tables = []
    for k in range(first, first + n):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        tables.append(transition_table(mutate(genome, ea, rng), io_, kind))
    scores = (batch_fitness(np.stack(tables), io_, task_config)
              if tables else np.zeros(0))
    return baseline, scores


def mutation_offset(genome, task_config, kind: str, n: int = 100, seed: int = 0,
                    ea: EaConfig = EaConfig()) -> float:
    """Mean mutant score over the baseline score."""
    baseline, scores = mutant_scores(genome, task_config, kind, n, seed, ea)
    if baseline <= 0.0:
        raise UndefinedOffsetError("baseline score is zero")
    return float(scores.sum() / n) / baseline


@dataclass
class ReplicateResult:
    replicate: str
    baseline: float
    mean_mutant: float
    offset: float
    complexity: int
    perfect: bool


@dataclass
class LineFit:
    n: int
    slope: float | None
    intercept: float | None
    r: float | None
    degenerate: bool


def fit_line(x, y) -> LineFit:
    """Least-squares line and Pearson r; degenerate when x has no spread."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    if n < 2:
        return LineFit(n, None, None, None, True)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        return LineFit(n, None, None, None, True)
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    syy = float(dy @ dy)
    r = float(dx @ dy) / math.sqrt(sxx * syy) if syy > 0 else None
    return LineFit(n, slope, intercept, r, False)


@dataclass
class RobustnessReport:
    results: list
    fit_all: LineFit
    fit_perfect: LineFit

    def to_dict(self) -> dict:
        return {"replicates": [asdict(r) for r in self.results],
                "fit_all": asdict(self.fit_all),
                "fit_perfect": asdict(self.fit_perfect)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "baseline", "mean_mutant", "offset",
                    "complexity", "perfect"])
        for r in self.results:
            w.writerow([r.replicate, repr(r.baseline), repr(r.mean_mutant),
                        repr(r.offset), r.complexity, int(r.perfect)])
        w.writerow([])
        w.writerow(["fit", "n", "slope", "intercept", "r", "degenerate"])
        for name, f in (("all", self.fit_all), ("perfect", self.fit_perfect)):
            w.writerow([name, f.n, _num(f.slope), _num(f.intercept), _num(f.r),
                        int(f.degenerate)])
        return buf.getvalue()

    def points_csv(self) -> str:
        """``complexity,offset,perfect`` rows for external plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["complexity", "offset", "perfect"])
        for r in self.results:
            w.writerow([r.complexity, repr(r.offset), int(r.perfect)])
        return buf.getvalue()


def _num(v):
    return "" if v is None else repr(v)


def complexity_vs_robustness(results) -> RobustnessReport:
    """Fit offset against flow complexity over all and over perfect agents."""
    results = list(results)
    if len(results) < 2:
        raise UsageError("need at least two replicates")
    x = [r.complexity for r in results]
    y = [r.offset for r in results]
    perfect = [r for r in results if r.perfect]
    return RobustnessReport(
        results, fit_line(x, y),
        fit_line([r.complexity for r in perfect], [r.offset for r in perfect]))


def replicate_result(name: str, genome, task_config, kind: str, complexity: int,
                     n: int = 100, seed: int = 0,
                     ea: EaConfig = EaConfig()) -> ReplicateResult:
    baseline, scores = mutant_scores(genome, task_config, kind, n, seed, ea)
    if baseline <= 0.0:
        raise UndefinedOffsetError(f"replicate {name}: baseline score is zero")
    mean = float(scores.sum() / n)
    return ReplicateResult(name, baseline, mean, mean / baseline, int(complexity),
                           baseline == 1.0)

