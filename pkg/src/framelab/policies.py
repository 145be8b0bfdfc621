"""Frame-selection policies and their evaluation against the brute-force optimum."""

from __future__ import annotations

import csv
import enum
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierSpec, SyntheticVideo, classify_clip, classify_frame
from .core import CapacityError, InvalidArgumentError, binomial, top_n_indices

DEFAULT_ENUMERATION_BUDGET = 10**7

UNIFORM = "uniform"
RANDOM = "random"
OPTIMAL = "optimal"
SEMI_OPTIMAL = "semi_optimal"
SEMI_OPTIMAL_MAX = "semi_optimal_max"
ALL_FRAMES = "all"
POLICY_NAMES = (UNIFORM, RANDOM, OPTIMAL, SEMI_OPTIMAL, SEMI_OPTIMAL_MAX, ALL_FRAMES)


class AggregationMode(enum.Enum):
    TRUE_LABEL = "label"
    MAX_OVER_CLASSES = "max"

    def reduce(self, confidences: np.ndarray, label: int) -> np.ndarray:
        """Collapse a (..., C) confidence array into one score per frame."""
        if self is AggregationMode.TRUE_LABEL:
            return confidences[..., label]
        return confidences.max(axis=-1)


class PolicyEvaluationError(RuntimeError):
    """A single video failed; the message names the video."""


@dataclass(frozen=True)
class PolicyResult:
    policy_name: str
    selected: tuple[int, ...]
    clip_confidence: float
    classifier_calls: int
    # clip evaluations made after selection, kept out of classifier_calls
    evaluation_calls: int = 0


def _check_counts(T: int, N: int) -> None:
    if T < 1 or N < 1 or N > T:
        raise InvalidArgumentError(f"need 1 <= N <= T, got N={N}, T={T}")


def uniform_policy(T: int, N: int) -> tuple[int, ...]:
    """Centered-stride selection: floor(k T / N) + floor(T / 2N) for k < N."""
    _check_counts(T, N)
    offset = T // (2 * N)
    taken: list[int] = []
    used = set()
    for k in range(N):
        i = min(max(k * T // N + offset, 0), T - 1)
        j = i
        while j in used and j < T - 1:
            j += 1
        if j in used:
            j = i
            while j in used:
                j -= 1
        used.add(j)
        taken.append(j)
    return tuple(sorted(taken))


def random_policy(T: int, N: int, seed: int) -> tuple[int, ...]:
    _check_counts(T, N)
    rng = np.random.default_rng(seed)
    return tuple(sorted(int(i) for i in rng.choice(T, size=N, replace=False)))


def sampling_fidelity(target, optimal) -> float:
    """Fraction of the optimal set recovered by ``target``."""
    a, b = set(target), set(optimal)
    if len(a) != len(tuple(target)) or len(b) != len(tuple(optimal)):
        raise InvalidArgumentError("index sets must not contain duplicates")
    if len(a) != len(b) or not a:
        raise InvalidArgumentError(f"size mismatch: {len(a)} vs {len(b)}")
    return len(a & b) / len(b)


def _evaluate(spec, video, name, selected, calls, evaluation_calls=0) -> PolicyResult:
    conf = classify_clip(spec, video, selected)
    return PolicyResult(name, selected, float(conf[video.label]), calls, evaluation_calls)


def optimal_policy(spec: ClassifierSpec, video: SyntheticVideo, N: int,
                   budget: int = DEFAULT_ENUMERATION_BUDGET) -> PolicyResult:
    """Exhaustive search over all C(T, N) subsets for the best true-label confidence.

    Subsets are visited in lexicographic order and only a strictly better
    confidence replaces the incumbent, so ties resolve to the
    lexicographically smallest subset.
    """
    T = video.T
    _check_counts(T, N)
    try:
        n_subsets = binomial(T, N)
    except CapacityError:
        raise CapacityError(f"optimal policy needs C({T},{N}) subsets, beyond 64-bit range") from None
    if n_subsets > budget:
        raise CapacityError(f"optimal policy needs C({T},{N}) = {n_subsets} subsets, budget is {budget}")
    best, best_conf = None, -1.0
    for subset in itertools.combinations(range(T), N):
        c = float(classify_clip(spec, video, subset)[video.label])
        if c > best_conf:
            best, best_conf = subset, c
    return PolicyResult(OPTIMAL, best, best_conf, n_subsets)


def frame_scores(spec: ClassifierSpec, video: SyntheticVideo, mode: AggregationMode) -> np.ndarray:
    conf = np.stack([classify_frame(spec, video, t) for t in range(video.T)])
    return mode.reduce(conf, video.label)


def semi_optimal_policy(spec: ClassifierSpec, video: SyntheticVideo, N: int,
                        mode: AggregationMode = AggregationMode.TRUE_LABEL) -> PolicyResult:
    """Score every frame on its own, keep the top N."""
    _check_counts(video.T, N)
    selected = top_n_indices(frame_scores(spec, video, mode), N)
    name = SEMI_OPTIMAL if mode is AggregationMode.TRUE_LABEL else SEMI_OPTIMAL_MAX
    return _evaluate(spec, video, name, selected, video.T, evaluation_calls=1)


def run_policy(name: str, spec: ClassifierSpec, video: SyntheticVideo, N: int, *,
               seed: int = 0, budget: int = DEFAULT_ENUMERATION_BUDGET) -> PolicyResult:
    if name == UNIFORM:
        return _evaluate(spec, video, name, uniform_policy(video.T, N), 1)
    if name == RANDOM:
        return _evaluate(spec, video, name, random_policy(video.T, N, seed), 1)
    if name == OPTIMAL:
        return optimal_policy(spec, video, N, budget)
    if name == SEMI_OPTIMAL:
        return semi_optimal_policy(spec, video, N, AggregationMode.TRUE_LABEL)
    if name == SEMI_OPTIMAL_MAX:
        return semi_optimal_policy(spec, video, N, AggregationMode.MAX_OVER_CLASSES)
    if name == ALL_FRAMES:
        return _evaluate(spec, video, name, tuple(range(video.T)), 1)
    raise InvalidArgumentError(f"unknown policy {name!r}")


@dataclass
class PolicySummary:
    mean_confidence: float
    mean_fidelity: float | None
    mean_calls: float

    def to_dict(self) -> dict:
        return {"mean_confidence": self.mean_confidence, "mean_fidelity": self.mean_fidelity,
                "mean_calls": self.mean_calls}


@dataclass
class Evaluation:
    N: int
    policies: list[str]
    videos: list[SyntheticVideo]
    results: dict[str, list[PolicyResult]]
    skipped: dict[str, str] = field(default_factory=dict)

    def summary(self) -> dict[str, PolicySummary]:
        out = {}
        reference = self.results.get(OPTIMAL)
        for name, rows in self.results.items():
            conf = float(np.mean([r.clip_confidence for r in rows]))
            calls = float(np.mean([r.classifier_calls for r in rows]))
            fid = None
            if reference is not None and name != ALL_FRAMES:
                fid = float(np.mean([sampling_fidelity(r.selected, o.selected)
                                     for r, o in zip(rows, reference)]))
            out[name] = PolicySummary(conf, fid, calls)
        return out

    def summary_dict(self) -> dict:
        doc = {name: s.to_dict() for name, s in self.summary().items()}
        for name, reason in self.skipped.items():
            doc[name] = {"skipped": reason}
        return doc

    def csv_rows(self) -> list[list]:
        rows = []
        for name in self.policies:
            for video, r in zip(self.videos, self.results.get(name, [])):
                rows.append([name, video.seed, self.N, video.T, ";".join(map(str, r.selected)),
                             repr(r.clip_confidence), r.classifier_calls])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["policy_name", "video_seed", "N", "T", "selected", "clip_confidence", "classifier_calls"])
        w.writerows(self.csv_rows())
        return buf.getvalue()


def _random_seed(video: SyntheticVideo) -> int:
    return int(np.random.SeedSequence([video.seed, 0xBADA55]).generate_state(1)[0])


def _evaluate_video(args):
    spec, video, N, names, budget = args
    return {name: run_policy(name, spec, video, N, seed=_random_seed(video), budget=budget)
            for name in names}


def evaluate_policies(spec: ClassifierSpec, corpus, N: int, policies=(UNIFORM, OPTIMAL, SEMI_OPTIMAL),
                      budget: int = DEFAULT_ENUMERATION_BUDGET, workers: int = 1,
                      skip_infeasible: bool = False) -> Evaluation:
    """Run each policy on each video and collect per-video results.

    With ``skip_infeasible`` an optimal policy that exceeds the enumeration
    budget is recorded as skipped instead of aborting the run.
    """
    corpus = list(corpus)
    if not corpus:
        raise InvalidArgumentError("corpus must not be empty")
    names = list(dict.fromkeys(policies))
    for name in names:
        if name not in POLICY_NAMES:
            raise InvalidArgumentError(f"unknown policy {name!r}")
    skipped = {}
    if OPTIMAL in names:
        T = max(v.T for v in corpus)
        _check_counts(T, N)
        try:
            n_subsets = binomial(T, N)
        except CapacityError:
            n_subsets = None
        if n_subsets is None or n_subsets > budget:
            if not skip_infeasible:
                raise CapacityError(f"optimal policy needs C({T},{N}) subsets, budget is {budget}")
            skipped[OPTIMAL] = "skipped: combinatorial budget"
    run_names = [n for n in names if n not in skipped]

    jobs = [(spec, v, N, run_names, budget) for v in corpus]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_video = list(pool.map(_evaluate_video, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
        # worker processes count on their own copies of the counter
        spec.calls.increment(sum(r.classifier_calls + r.evaluation_calls
                                 for d in per_video for r in d.values()))
    else:
        per_video = []
        for k, job in enumerate(jobs):
            try:
                per_video.append(_evaluate_video(job))
            except (InvalidArgumentError, CapacityError) as exc:
                raise PolicyEvaluationError(f"video {k} (seed {corpus[k].seed}): {exc}") from exc
    results = {name: [d[name] for d in per_video] for name in run_names}
    return Evaluation(N, names, corpus, results, skipped)
