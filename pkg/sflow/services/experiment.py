"""Engine comparison experiments driven by a JSON document."""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..config.settings import settings
from ..domain.numkernel import TraceWeights
from ..domain.triples import (
    SpectralTripleRep, TripleDescription, circle_triple, double_up, generator_power, power_name,
    triple_from_json, weighted_sum_triple,
)
from ..errors import SflowError
from . import flow, zeta
from .report_formatter import format_rows_csv, write_compare_report, write_text

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_USAGE = 2

# numerical failures inside one cell; they fail that cell, not the run
CELL_ERRORS = (SflowError, np.linalg.LinAlgError, ValueError, ArithmeticError)


class ExperimentConfigError(SflowError):
    """Raised when an experiment document is invalid or asks for an unsupported engine."""


class Engine(str, Enum):
    CROSSING = "crossing"
    INDEX = "index"
    CP = "cp"
    DOUBLED = "doubled"
    RESIDUE = "residue"
    ZETA_SUM = "zetaSum"
    LOWDIM = "lowdim"


RESIDUE_ENGINES = {Engine.RESIDUE, Engine.ZETA_SUM, Engine.LOWDIM}


class CircleModel(BaseModel):
    N: int = Field(..., ge=1)
    truncation_mode: str = Field("plain", alias="truncationMode")
    weight: float = Field(1.0, ge=0)

    model_config = ConfigDict(populate_by_name=True)


class ExperimentParameters(BaseModel):
    windings: List[int] = Field(default_factory=lambda: list(range(-3, 4)), alias="w")
    r: float = Field(1.0, gt=0)
    n: float = 3.0
    p: float = Field(1.0, ge=1)
    edge_margin: Optional[int] = Field(None, ge=0, alias="edgeMargin")
    tolerance: float = Field(1e-2, ge=0)

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("windings")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one winding number is required")
        return v


class OutputModel(BaseModel):
    path: Optional[str] = None
    format: str = "csv"

    @field_validator("format")
    @classmethod
    def _known_format(cls, v):
        if v not in ("csv", "json"):
            raise ValueError(f"output format must be csv or json, got {v!r}")
        return v


class ExperimentConfig(BaseModel):
    """One comparison run: a triple (explicit, circle, or weighted circles), engines and parameters."""
    triple: Optional[TripleDescription] = None
    circle: Optional[CircleModel] = None
    weighted: Optional[List[CircleModel]] = None
    generator: str = "u"
    engines: List[Engine]
    parameters: ExperimentParameters = Field(default_factory=ExperimentParameters)
    seed: int = 0
    output: OutputModel = Field(default_factory=OutputModel)
    record_runtime: bool = Field(False, alias="recordRuntime")

    model_config = ConfigDict(populate_by_name=True)

    @field_validator("engines")
    @classmethod
    def _some_engines(cls, v):
        if not v:
            raise ValueError("the engine set is empty; choose from " + ", ".join(e.value for e in Engine))
        if len(set(v)) != len(v):
            raise ValueError("engines must not repeat")
        return v

    @model_validator(mode="after")
    def _one_triple(self):
        given = [x is not None for x in (self.triple, self.circle, self.weighted)]
        if sum(given) != 1:
            raise ValueError("exactly one of triple, circle, weighted must be given")
        return self


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ExperimentConfigError(f"cannot read experiment document {path}: {exc}") from exc
    return ExperimentConfig.model_validate(data)


def build_triple(cfg: ExperimentConfig) -> SpectralTripleRep:
    p = cfg.parameters.p
    if cfg.circle is not None:
        t = circle_triple(cfg.circle.N, cfg.circle.truncation_mode, p)
        w = cfg.circle.weight
        if w == 1.0:
            return t
        return replace(t, weights=TraceWeights(w * t.weights.values),
                       circle_blocks=tuple(replace(b, weight=w * b.weight) for b in t.circle_blocks))
    if cfg.weighted is not None:
        if len(cfg.weighted) < 2:
            raise ExperimentConfigError("a weighted triple needs at least two circles")
        parts = [circle_triple(c.N, c.truncation_mode, p) for c in cfg.weighted]
        t, acc = parts[0], cfg.weighted[0].weight
        for c, part in zip(cfg.weighted[1:], parts[1:]):
            t = weighted_sum_triple(t, part, acc, c.weight)
            acc = 1.0
        return t
    return triple_from_json(cfg.triple.model_dump(by_alias=True))


def check_compatibility(cfg: ExperimentConfig, t: SpectralTripleRep) -> None:
    residue = [e.value for e in cfg.engines if e in RESIDUE_ENGINES]
    if residue and not t.is_circle_type:
        raise ExperimentConfigError(f"engines {residue} need a circle-type triple, {t.label!r} is not")
    if Engine.LOWDIM in cfg.engines and not 1 <= t.p < 2:
        raise ExperimentConfigError(f"the lowdim engine needs 1 <= p < 2, got {t.p:g}")
    if Engine.CP in cfg.engines and cfg.parameters.n <= t.p:
        raise ExperimentConfigError(f"the cp engine needs n > p, got n={cfg.parameters.n:g}")
    if cfg.generator not in t.gens:
        raise ExperimentConfigError(f"triple {t.label!r} has no generator {cfg.generator!r}")


@dataclass
class CellResult:
    engine: Engine
    w: int
    value: float
    error_estimate: Optional[float]
    runtime_ms: float


@dataclass
class CompareResult:
    rows: List[CellResult]
    discrepancies: Dict[int, float]
    tolerance: float
    passed: bool
    record_runtime: bool = False
    seed: int = 0
    label: str = ""
    failures: List[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.failures:
            return EXIT_USAGE
        return EXIT_OK if self.passed else EXIT_TOLERANCE


def _engine_value(engine: Engine, t: SpectralTripleRep, name: str, params: ExperimentParameters
                  ) -> Tuple[float, Optional[float]]:
    """Flow of D -> u*Du for the generator `name`, oriented so every engine reports the winding."""
    margin = params.edge_margin
    if engine is Engine.CROSSING:
        report = flow.crossing_flow(flow.linear_flow_path(t, name), edge_margin=margin)
        return report.value, report.error_estimate
    if engine is Engine.INDEX:
        report = flow.index_pup(t, name, edge_margin=margin)
        return report.value, report.error_estimate
    if engine is Engine.CP:
        # the integral formula computes sf(D, uDu*)
        report = flow.cp_integral_flow(t, name, params.n, edge_margin=margin)
        return -report.value, report.error_estimate
    if engine is Engine.DOUBLED:
        report = flow.doubled_flow(double_up(t, name), r=params.r, edge_margin=margin)
        return report.value, report.error_estimate
    if engine is Engine.RESIDUE:
        return zeta.sf_residue_cocycle(t, name), None
    if engine is Engine.ZETA_SUM:
        return zeta.sf_zeta_sum_residue(t, name), None
    return zeta.low_dim_flow(t, name), None


def _run_cell(engine: Engine, w: int, t: SpectralTripleRep, cfg: ExperimentConfig) -> CellResult:
    name = power_name(cfg.generator, w)
    start = time.perf_counter()
    value, err = _engine_value(engine, t, name, cfg.parameters)
    elapsed = (time.perf_counter() - start) * 1000
    logger.info(f"{engine.value} w={w}: {value:.10g} ({elapsed:.0f} ms)")
    return CellResult(engine, w, value, err, elapsed)


def resolve_threads(threads: Optional[int]) -> int:
    env = os.environ.get("SFLOW_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ExperimentConfigError(f"SFLOW_THREADS must be an integer, got {env!r}") from None
    elif threads is None:
        threads = settings.threads
    threads = threads or 1
    if threads < 1:
        raise ExperimentConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def compare_engines(cfg: ExperimentConfig, threads: Optional[int] = None) -> CompareResult:
    t = build_triple(cfg)
    check_compatibility(cfg, t)
    for w in sorted(set(cfg.parameters.windings)):
        t = generator_power(t, cfg.generator, w)
    cells = [(engine, w) for engine in cfg.engines for w in cfg.parameters.windings]
    workers = resolve_threads(threads)
    logger.info(f"comparing {len(cfg.engines)} engines on {t.label!r} over {len(cells)} cells with {workers} threads")

    def job(cell: Tuple[Engine, int]) -> Union[CellResult, str]:
        engine, w = cell
        try:
            return _run_cell(engine, w, t, cfg)
        except CELL_ERRORS as exc:
            logger.error(f"{engine.value} w={w} failed: {exc!r}")
            return f"{engine.value} w={w}: {exc}"

    if workers == 1:
        outcomes = [job(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, cells))

    rows = [o for o in outcomes if isinstance(o, CellResult)]
    failures = [o for o in outcomes if isinstance(o, str)]
    discrepancies: Dict[int, float] = {}
    for w in cfg.parameters.windings:
        values = [row.value for row in rows if row.w == w]
        discrepancies[w] = max(values) - min(values) if len(values) > 1 else 0.0
    tol = cfg.parameters.tolerance
    passed = not failures and all(d <= tol for d in discrepancies.values())
    if not passed and not failures:
        worst = max(discrepancies, key=discrepancies.get)
        logger.warning(f"engines disagree by {discrepancies[worst]:.3e} at w={worst} (tolerance {tol:g})")
    return CompareResult(rows, discrepancies, tol, passed, cfg.record_runtime, cfg.seed, t.label, failures)


def run_flow_compare(cfg: ExperimentConfig, out: Optional[Union[str, Path]] = None,
                     fmt: Optional[str] = None, threads: Optional[int] = None) -> int:
    """Run the comparison, write the table and return the process exit code."""
    try:
        result = compare_engines(cfg, threads)
    except SflowError as exc:
        logger.error(f"experiment failed: {exc}")
        return EXIT_USAGE
    target = out or cfg.output.path
    if target:
        write_compare_report(result, target, fmt or cfg.output.format)
    else:
        logger.info("no output path given; results only logged")
    if result.failures:
        logger.error(f"{len(result.failures)} cells failed")
    return result.exit_code


def config_error_message(exc: Union[ValidationError, SflowError]) -> str:
    if isinstance(exc, ValidationError):
        return "; ".join(f"{'.'.join(str(x) for x in e['loc'])}: {e['msg']}" for e in exc.errors())
    return str(exc)


TERM_COLUMNS = ("m", "k", "j", "coefficient", "tau", "contribution")


def run_term_table(cfg: ExperimentConfig, w: int, out: Union[str, Path]) -> int:
    """Write the (m, k, j) residue terms of the flow along generator^w as CSV."""
    try:
        t = build_triple(cfg)
        if not t.is_circle_type:
            raise ExperimentConfigError(f"term tables need a circle-type triple, {t.label!r} is not")
        t = generator_power(t, cfg.generator, w)
        rows = zeta.term_table(t, power_name(cfg.generator, w))
    except SflowError as exc:
        logger.error(f"term table failed: {exc}")
        return EXIT_USAGE
    write_text(out, format_rows_csv(rows, TERM_COLUMNS))
    logger.info(f"{len(rows)} residue terms, total {sum(r['contribution'] for r in rows):.10g}")
    return EXIT_OK
