"""Experiment configuration and the three report-producing runs.

Every run is a pure function of its ExperimentConfig: corpora, shuffles and
random baselines all derive their seeds from ``config.seed``, so re-running
the same config writes byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import policies as pol
from .classifier import (ADDITIVE, CLASSIFIER_KINDS, REDUNDANCY_PENALIZED, ClassifierSpec,
                         GeneratorConfig, confidence_matrix, generate_corpus, make_classifier)
from .core import CapacityError, InvalidArgumentError, binomial
from .redundancy import redundancy_sweep
from .sampler import (MSE, RANKING, TrainConfig, init_model, infer, make_heldout, train)

log = logging.getLogger(__name__)

PRESETS = {
    "full": [(6, 10), (8, 30), (16, 60), (32, 100)],
    "small": [(6, 10)],
}
FORMATS = ("csv", "json")


class ConfigError(InvalidArgumentError):
    """The experiment config is malformed or inconsistent."""


@dataclass
class ClassifierSettings:
    kind: str = REDUNDANCY_PENALIZED
    interaction_strength: float | None = None
    temperature: float = 1.0
    bandwidth: float | None = None


@dataclass
class PolicyGridSettings:
    cells: list = field(default_factory=lambda: [[6, 10]])
    preset: str | None = None
    policies: list = field(default_factory=lambda: [pol.UNIFORM, pol.RANDOM, pol.OPTIMAL,
                                                     pol.SEMI_OPTIMAL, pol.SEMI_OPTIMAL_MAX,
                                                     pol.ALL_FRAMES])
    videos_per_cell: int = 100
    enumeration_budget: int = pol.DEFAULT_ENUMERATION_BUDGET


@dataclass
class RedundancySettings:
    rhos: list = field(default_factory=lambda: [0.0, 0.5, 0.9, 0.99])
    videos_per_cell: int = 200


@dataclass
class SamplerSettings:
    N: int = 6
    train_videos: int = 200
    heldout_videos: int = 100
    hidden_dim: int = 64
    projection: str = "pca"
    ablation: bool = False
    lambda_sweep: list = field(default_factory=list)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class ExperimentConfig:
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    policy_grid: PolicyGridSettings = field(default_factory=PolicyGridSettings)
    redundancy: RedundancySettings = field(default_factory=RedundancySettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    formats: list = field(default_factory=lambda: list(FORMATS))

    def grid_cells(self) -> list[tuple[int, int]]:
        pg = self.policy_grid
        if pg.preset is not None:
            return list(PRESETS[pg.preset])
        return [(int(n), int(t)) for n, t in pg.cells]

    def make_classifier(self) -> ClassifierSpec:
        c, g = self.classifier, self.generator
        return make_classifier(c.kind, g.C, g.D, g.prototype_seed, c.interaction_strength,
                               c.temperature, c.bandwidth)

    def validate(self) -> None:
        try:
            self.generator.validate()
        except InvalidArgumentError as exc:
            raise ConfigError(f"generator: {exc}") from None
        c = self.classifier
        if c.kind not in CLASSIFIER_KINDS:
            raise ConfigError(f"classifier.kind must be one of {CLASSIFIER_KINDS}")
        if c.kind == ADDITIVE and c.interaction_strength not in (None, 0, 0.0):
            raise ConfigError("additive classifier takes no interaction_strength")
        pg = self.policy_grid
        if pg.preset is not None and pg.preset not in PRESETS:
            raise ConfigError(f"unknown preset {pg.preset!r}; choose from {sorted(PRESETS)}")
        for name in pg.policies:
            if name not in pol.POLICY_NAMES:
                raise ConfigError(f"unknown policy {name!r}")
        for cell in (pg.cells if pg.preset is None else PRESETS[pg.preset]):
            if len(cell) != 2 or not 1 <= int(cell[0]) <= int(cell[1]):
                raise ConfigError(f"grid cell {cell} must be [N, T] with 1 <= N <= T")
        if pg.videos_per_cell < 1 or pg.enumeration_budget < 1:
            raise ConfigError("videos_per_cell and enumeration_budget must be >= 1")
        r = self.redundancy
        if not r.rhos:
            raise ConfigError("redundancy.rhos must not be empty")
        if any(not 0.0 <= float(x) < 1.0 for x in r.rhos) or r.videos_per_cell < 1:
            raise ConfigError("redundancy.rhos must lie in [0, 1) and videos_per_cell >= 1")
        s = self.sampler
        if not 1 <= s.N <= self.generator.T:
            raise ConfigError(f"sampler.N must be in [1, T={self.generator.T}]")
        if s.train_videos < 1 or s.heldout_videos < 1 or s.hidden_dim < 1:
            raise ConfigError("sampler corpus sizes and hidden_dim must be >= 1")
        if s.projection not in ("pca", "random"):
            raise ConfigError("sampler.projection must be 'pca' or 'random'")
        if any(not 0.0 <= float(x) <= 1.0 for x in s.lambda_sweep):
            raise ConfigError("sampler.lambda_sweep values must lie in [0, 1]")
        if not set(self.formats) <= set(FORMATS) or not self.formats:
            raise ConfigError(f"formats must be a non-empty subset of {FORMATS}")
        if self.seed < 0:
            raise ConfigError("seed must be an unsigned integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    nested = {"generator": GeneratorConfig, "classifier": ClassifierSettings,
              "policy_grid": PolicyGridSettings, "redundancy": RedundancySettings,
              "sampler": SamplerSettings, "train": TrainConfig}
    kwargs = {}
    for key, value in doc.items():
        sub = nested.get(key)
        kwargs[key] = _build(sub, value, f"{path}.{key}".lstrip(".")) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(doc: dict, seed: int | None = None) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, doc, "")
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(doc, seed)


# ----------------------------------------------------------------------------
# output helpers


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x):
    """Floats go through repr so CSV text round-trips exactly."""
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else x


class ReportWriter:
    def __init__(self, out_dir, formats=FORMATS):
        self.out = Path(out_dir)
        self.formats = set(formats)
        self.written: list[Path] = []

    def _write(self, name: str, text: str) -> None:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.written.append(path)

    def json(self, name: str, obj) -> None:
        if "json" in self.formats:
            self._write(name, dump_json(obj))

    def csv(self, name: str, text: str) -> None:
        if "csv" in self.formats:
            self._write(name, text)

    def raw(self, name: str, text: str) -> None:
        self._write(name, text)


# ----------------------------------------------------------------------------
# policy grid


def run_policy_grid(config: ExperimentConfig, out_dir, workers: int = 1) -> dict:
    """Evaluate the configured policies on a fresh corpus per (N, T) cell.

    An optimal policy beyond the enumeration budget marks its cell entry as
    skipped and the run continues.
    """
    config.validate()
    writer = ReportWriter(out_dir, config.formats)
    spec = config.make_classifier()
    pg = config.policy_grid
    cells = []
    for N, T in config.grid_cells():
        gen = dataclasses.replace(config.generator, T=T)
        corpus = generate_corpus(gen, pg.videos_per_cell, config.seed, tag=f"grid-{N}-{T}")
        ev = pol.evaluate_policies(spec, corpus, N, pg.policies, pg.enumeration_budget,
                                   workers=workers, skip_infeasible=True)
        try:
            n_subsets = binomial(T, N)
        except CapacityError:
            n_subsets = None
        writer.csv(f"policy_grid/cell_N{N}_T{T}.csv", ev.to_csv())
        cells.append({"N": N, "T": T, "videos": len(corpus), "search_space": n_subsets,
                      "video_seeds": [v.seed for v in corpus], "policies": ev.summary_dict()})
        log.info("cell N=%d T=%d done", N, T)
    summary = {"config": config.to_dict(), "cells": cells}
    writer.json("policy_grid/summary.json", summary)
    return summary


# ----------------------------------------------------------------------------
# redundancy study


def run_redundancy_study(config: ExperimentConfig, out_dir) -> dict:
    config.validate()
    writer = ReportWriter(out_dir, config.formats)
    r = config.redundancy
    result = redundancy_sweep(config.generator, r.rhos, r.videos_per_cell, config.seed)
    rows = []
    for cell in result.cells:
        for k, value in enumerate(cell.values):
            rows.append([repr(cell.rho), k, repr(float(value))])
    writer.csv("redundancy/pairs.csv", _csv(["rho", "pair_index", "relevance"], rows))
    summary = {"config": config.to_dict(), **result.to_dict()}
    writer.json("redundancy/summary.json", summary)
    return summary


# ----------------------------------------------------------------------------
# sampler experiment


@dataclass
class SamplerData:
    spec: ClassifierSpec
    train: list
    heldout: list
    train_teachers: list
    heldout_teachers: list


def prepare_sampler_data(config: ExperimentConfig) -> SamplerData:
    s = config.sampler
    spec = config.make_classifier()
    tr = generate_corpus(config.generator, s.train_videos, config.seed, tag="train")
    ho = generate_corpus(config.generator, s.heldout_videos, config.seed, tag="heldout")
    return SamplerData(spec, tr, ho, [confidence_matrix(spec, v) for v in tr],
                       [confidence_matrix(spec, v) for v in ho])


def train_sampler(config: ExperimentConfig, data: SamplerData, train_config: TrainConfig | None = None):
    s = config.sampler
    tc = train_config or dataclasses.replace(s.train, seed=config.seed)
    mode = pol.AggregationMode(tc.mode)
    model = init_model(config.generator.D, config.generator.C, s.hidden_dim, config.seed,
                       corpus=data.train if s.projection == "pca" else None)
    heldout = make_heldout(data.spec, data.heldout, s.N, mode, data.heldout_teachers)
    return train(model, data.train, data.spec, tc, heldout, data.train_teachers)


def _compare(config: ExperimentConfig, data: SamplerData, model) -> list[dict]:
    """Held-out comparison of the trained sampler against the baseline policies."""
    s, spec, N = config.sampler, data.spec, config.sampler.N
    T = config.generator.T
    mode = pol.AggregationMode(s.train.mode)
    teacher_name = pol.SEMI_OPTIMAL if mode is pol.AggregationMode.TRUE_LABEL else pol.SEMI_OPTIMAL_MAX
    names = [pol.UNIFORM, pol.RANDOM, pol.SEMI_OPTIMAL, pol.SEMI_OPTIMAL_MAX]
    with_optimal = binomial(T, N) <= config.policy_grid.enumeration_budget
    if with_optimal:
        names.append(pol.OPTIMAL)
    ev = pol.evaluate_policies(spec, data.heldout, N, names, config.policy_grid.enumeration_budget)
    results = dict(ev.results)
    results["sampler"] = [infer(model, v, N, spec) for v in data.heldout]
    rows = []
    for name in ["sampler", *names]:
        rs = results[name]
        fid_s = np.mean([pol.sampling_fidelity(r.selected, t.selected)
                         for r, t in zip(rs, results[teacher_name])])
        fid_o = (np.mean([pol.sampling_fidelity(r.selected, o.selected)
                          for r, o in zip(rs, results[pol.OPTIMAL])]) if with_optimal else None)
        rows.append({"policy": name,
                     "mean_confidence": float(np.mean([r.clip_confidence for r in rs])),
                     "fidelity_to_semi_optimal": float(fid_s),
                     "fidelity_to_optimal": None if fid_o is None else float(fid_o),
                     "mean_calls": float(np.mean([r.classifier_calls for r in rs]))})
    return rows


def ablation_configs(base: TrainConfig) -> list[tuple[dict, TrainConfig]]:
    """The 2 x 2 x 2 grid: importance loss x aggregation x label guidance on/off."""
    out = []
    for loss in (MSE, RANKING):
        for mode in ("label", "max"):
            for lg in (False, True):
                tc = dataclasses.replace(base, importance_loss=loss, mode=mode,
                                         lam=base.lam if lg else 1.0)
                out.append(({"importance_loss": loss, "mode": mode, "label_guidance": lg,
                             "lambda": tc.lam}, tc))
    return out


def _heldout_confidence(config, data, tc) -> tuple[float, float]:
    res = train_sampler(config, data, tc)
    conf = [infer(res.model, v, config.sampler.N, data.spec).clip_confidence for v in data.heldout]
    return float(np.mean(conf)), res.log[-1].heldout_fidelity if res.log else float("nan")


def run_sampler_experiment(config: ExperimentConfig, out_dir) -> dict:
    """Train the sampler, compare it on held-out videos, optionally run ablations."""
    config.validate()
    writer = ReportWriter(out_dir, config.formats)
    data = prepare_sampler_data(config)
    result = train_sampler(config, data)
    writer.csv("sampler/training_log.csv", result.log_csv())
    writer.raw("sampler/checkpoint.json", dump_json(result.model.to_dict()))
    comparison = _compare(config, data, result.model)
    writer.csv("sampler/comparison.csv", _csv(
        ["policy", "mean_confidence", "fidelity_to_semi_optimal", "fidelity_to_optimal", "mean_calls"],
        [[r["policy"], _num(r["mean_confidence"]), _num(r["fidelity_to_semi_optimal"]),
          _num(r["fidelity_to_optimal"]), _num(r["mean_calls"])] for r in comparison]))
    summary = {
        "config": config.to_dict(),
        "train_seeds": [v.seed for v in data.train],
        "heldout_seeds": [v.seed for v in data.heldout],
        "training": [dataclasses.asdict(e) for e in result.log],
        "comparison": comparison,
    }
    base = dataclasses.replace(config.sampler.train, seed=config.seed)
    if config.sampler.ablation:
        rows = []
        for flags, tc in ablation_configs(base):
            conf, fid = _heldout_confidence(config, data, tc)
            rows.append({**flags, "heldout_confidence": conf, "heldout_fidelity": fid})
        writer.csv("sampler/ablation.csv", _csv(
            ["importance_loss", "mode", "label_guidance", "lambda", "heldout_confidence", "heldout_fidelity"],
            [[r["importance_loss"], r["mode"], r["label_guidance"], _num(r["lambda"]),
              _num(r["heldout_confidence"]), _num(r["heldout_fidelity"])] for r in rows]))
        summary["ablation"] = rows
    if config.sampler.lambda_sweep:
        rows = []
        for lam in config.sampler.lambda_sweep:
            conf, fid = _heldout_confidence(config, data, dataclasses.replace(base, lam=float(lam)))
            rows.append({"lambda": float(lam), "heldout_confidence": conf, "heldout_fidelity": fid})
        writer.csv("sampler/lambda_sweep.csv", _csv(
            ["lambda", "heldout_confidence", "heldout_fidelity"],
            [[_num(r["lambda"]), _num(r["heldout_confidence"]), _num(r["heldout_fidelity"])] for r in rows]))
        summary["lambda_sweep"] = rows
    writer.json("sampler/summary.json", _clean(summary))
    return summary


def _clean(obj):
    """Replace NaN with None so JSON output stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj
