"""
Constrained channel search over a SearchSpace.

Small spaces (at most EXHAUSTIVE_LIMIT configs) are enumerated; larger ones
run aging evolution. Every config is checked against the FLOP and latency
budgets before the scorer sees it, and ties are broken by the config's
width tuple so results do not depend on evaluation order or worker count.
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from latency_table import REFERENCE_INPUT_HW, LatencyLookupError, LatencyTable, lut_latency
from model_store import SplitMix64
from supernet import SearchSpace, SubConfig, flops
from utils import LicCodecError, PerformanceTimer, load_json_file, safe_json_export

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 4096
POPULATION_SIZE = 16
TOURNAMENT_SIZE = 4
DEFAULT_BUDGET = 1000
ATTEMPTS_PER_EVALUATION = 20
SEARCH_MODES = ("auto", "exhaustive", "evolution")

Scorer = Callable[[SubConfig], float]


class SearchError(LicCodecError):
    """Raised for invalid search requests."""

    pass


@dataclass(frozen=True)
class SearchConstraints:
    """Hard budgets; None disables a budget."""

    max_flops: Optional[int] = None
    max_latency_ms: Optional[float] = None
    table: Optional[LatencyTable] = None
    input_hw: Tuple[int, int] = REFERENCE_INPUT_HW

    def __post_init__(self) -> None:
        if self.max_latency_ms is not None and self.table is None:
            raise SearchError("a latency budget needs a latency table")


@dataclass(frozen=True)
class SearchRecord:
    config: SubConfig
    flops: int
    latency_ms: Optional[float]
    feasible: bool
    score: Optional[float] = None

    @property
    def rank_key(self) -> Tuple[float, Tuple[int, ...]]:
        return (self.score, self.config.values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.as_dict(),
            "label": self.config.label(),
            "flops": self.flops,
            "latency_ms": self.latency_ms,
            "feasible": self.feasible,
            "score": self.score,
        }


@dataclass
class SearchResult:
    space_name: str
    mode: str
    best: Optional[SubConfig]
    best_score: Optional[float]
    evaluations: int
    records: List[SearchRecord] = field(default_factory=list)
    pareto: List[SearchRecord] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.best is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "space": self.space_name,
            "mode": self.mode,
            "feasible": self.feasible,
            "best": self.best.as_dict() if self.best else None,
            "best_label": self.best.label() if self.best else None,
            "best_score": self.best_score,
            "evaluations": self.evaluations,
            "pareto": [r.to_dict() for r in self.pareto],
            "records": [r.to_dict() for r in self.records],
        }

    def save(self, path: Union[str, Path]) -> None:
        safe_json_export(self.to_dict(), path)


def check_constraints(cfg: SubConfig, constraints: SearchConstraints) -> SearchRecord:
    """Cost a config and test it against the budgets, without scoring."""
    cost = flops(cfg, constraints.input_hw)
    latency = None
    if constraints.table is not None:
        try:
            latency = lut_latency(cfg, constraints.table, constraints.input_hw)
        except LatencyLookupError:
            if constraints.max_latency_ms is not None:
                raise
    feasible = constraints.max_flops is None or cost <= constraints.max_flops
    if constraints.max_latency_ms is not None:
        feasible = feasible and latency <= constraints.max_latency_ms
    return SearchRecord(cfg, cost, latency, feasible)


def pareto_front(records: Sequence[SearchRecord]) -> List[SearchRecord]:
    """Scored records not dominated in (cost, score); cost is latency when known, else FLOPs."""

    def cost(r: SearchRecord) -> float:
        return r.latency_ms if r.latency_ms is not None else float(r.flops)

    front: List[SearchRecord] = []
    best_score = float("inf")
    for record in sorted((r for r in records if r.score is not None), key=lambda r: (cost(r), r.rank_key)):
        if record.score < best_score:
            front.append(record)
            best_score = record.score
    return front


class _Evaluator:
    """Memoized feasibility check plus scoring."""

    def __init__(self, constraints: SearchConstraints, scorer: Scorer):
        self.constraints = constraints
        self.scorer = scorer
        self.records: Dict[SubConfig, SearchRecord] = {}
        self.scored = 0

    def check(self, cfg: SubConfig) -> SearchRecord:
        if cfg not in self.records:
            self.records[cfg] = check_constraints(cfg, self.constraints)
        return self.records[cfg]

    def score(self, record: SearchRecord) -> SearchRecord:
        if record.score is not None or not record.feasible:
            return record
        scored = SearchRecord(
            record.config, record.flops, record.latency_ms, True, float(self.scorer(record.config))
        )
        self.records[record.config] = scored
        self.scored += 1
        return scored

    def score_many(self, records: Sequence[SearchRecord], workers: int) -> List[SearchRecord]:
        todo = [r for r in records if r.feasible and r.score is None]
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scores = list(pool.map(lambda r: float(self.scorer(r.config)), todo))
        else:
            scores = [float(self.scorer(r.config)) for r in todo]
        for record, score in zip(todo, scores):
            self.records[record.config] = SearchRecord(record.config, record.flops, record.latency_ms, True, score)
        self.scored += len(todo)
        return [self.records[r.config] for r in records]


def _exhaustive(space: SearchSpace, evaluator: _Evaluator, workers: int) -> None:
    candidates = [evaluator.check(cfg) for cfg in space.enumerate()]
    evaluator.score_many(candidates, workers)


def _mutate(cfg: SubConfig, space: SearchSpace, rng: SplitMix64) -> SubConfig:
    """Move one searchable layer one candidate step up or down."""
    mutable = [i for i, options in enumerate(space.candidates) if len(options) > 1]
    if not mutable:
        return cfg
    indices = list(space.indices(cfg))
    layer = mutable[rng.choice_index(len(mutable))]
    top = len(space.candidates[layer]) - 1
    step = 1 if rng.choice_index(2) else -1
    if not 0 <= indices[layer] + step <= top:
        step = -step
    indices[layer] += step
    return space.from_indices(indices)


def _random_config(space: SearchSpace, rng: SplitMix64) -> SubConfig:
    return space.from_indices([rng.choice_index(len(options)) for options in space.candidates])


def _evolution(space: SearchSpace, evaluator: _Evaluator, budget: int, seed: int) -> None:
    rng = SplitMix64(seed)
    population: deque = deque(maxlen=POPULATION_SIZE)
    attempts = 0
    max_attempts = ATTEMPTS_PER_EVALUATION * budget

    # Seed the population; the smallest config is the likeliest to fit.
    seeds = [space.min_config()]
    while len(population) < POPULATION_SIZE and evaluator.scored < budget and attempts < max_attempts:
        cfg = seeds.pop() if seeds else _random_config(space, rng)
        attempts += 1
        record = evaluator.check(cfg)
        if record.feasible:
            population.append(evaluator.score(record))
    if not population:
        return

    while evaluator.scored < budget and attempts < max_attempts:
        attempts += 1
        contenders = [population[rng.choice_index(len(population))] for _ in range(TOURNAMENT_SIZE)]
        parent = min(contenders, key=lambda r: r.rank_key)
        record = evaluator.check(_mutate(parent.config, space, rng))
        if not record.feasible:
            continue
        population.append(evaluator.score(record))


def search(
    space: SearchSpace,
    constraints: SearchConstraints,
    scorer: Scorer,
    budget: Optional[int] = None,
    seed: int = 0,
    mode: str = "auto",
    workers: int = 1,
) -> SearchResult:
    """
    Lowest-score config of ``space`` meeting ``constraints``.

    ``budget`` caps scorer calls during evolution. "auto" enumerates any
    space of at most EXHAUSTIVE_LIMIT configs, whatever the budget. An
    infeasible search returns a result whose ``best`` is None rather than
    raising.
    """
    if mode not in SEARCH_MODES:
        raise SearchError(f"unknown search mode {mode!r}; expected one of {SEARCH_MODES}")
    if budget is not None and budget < 1:
        raise SearchError(f"budget must be >= 1, got {budget}")
    if workers < 1:
        raise SearchError(f"workers must be >= 1, got {workers}")

    if mode == "auto":
        mode = "exhaustive" if space.size <= EXHAUSTIVE_LIMIT else "evolution"

    evaluator = _Evaluator(constraints, scorer)
    with PerformanceTimer(f"{mode} search over {space.name} ({space.size} configs)"):
        if mode == "exhaustive":
            _exhaustive(space, evaluator, workers)
        else:
            _evolution(space, evaluator, budget or DEFAULT_BUDGET, seed)

    records = sorted(evaluator.records.values(), key=lambda r: r.config.values)
    scored = [r for r in records if r.score is not None]
    best = min(scored, key=lambda r: r.rank_key) if scored else None
    if best is None:
        logger.warning(f"No configuration of {space.name} satisfies the constraints")
    else:
        logger.info(f"Best config {best.config.label()} score {best.score:.6g} after {evaluator.scored} evaluations")
    return SearchResult(
        space.name,
        mode,
        best.config if best else None,
        best.score if best else None,
        evaluator.scored,
        records,
        pareto_front(records),
    )


# Scorers


def flops_scorer(input_hw: Tuple[int, int] = REFERENCE_INPUT_HW) -> Scorer:
    return lambda cfg: float(flops(cfg, input_hw))


def latency_scorer(table: LatencyTable, input_hw: Tuple[int, int] = REFERENCE_INPUT_HW) -> Scorer:
    return lambda cfg: lut_latency(cfg, table, input_hw)


def scores_file_scorer(scores: Union[str, Path, Mapping[str, float]]) -> Scorer:
    """Scores keyed by SubConfig.label(), from a mapping or a JSON file."""
    table = dict(scores) if isinstance(scores, Mapping) else load_json_file(scores)
    if not isinstance(table, dict):
        raise SearchError("scores file must hold a JSON object of label -> score")

    def score(cfg: SubConfig) -> float:
        label = cfg.label()
        if label not in table:
            raise SearchError(f"no score for config {label}")
        return float(table[label])

    return score
