"""Synthetic videos and the frozen prototype classifier that scores them.

Frames are D-dimensional feature vectors. A video is an AR(1) trajectory with
a contiguous salient segment carrying the true class prototype and, outside
it, weaker distractor content from another class.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import InvalidArgumentError, softmax_rows, validate_index_set
from .redundancy import KernelConfig, pairwise_relevance

ADDITIVE = "additive"
REDUNDANCY_PENALIZED = "redundancy-penalized"
CLASSIFIER_KINDS = (ADDITIVE, REDUNDANCY_PENALIZED)


@dataclass(frozen=True)
class GeneratorConfig:
    T: int = 10
    D: int = 16
    C: int = 5
    smoothness: float = 0.5
    salient_fraction: float = 0.5
    noise_scale: float = 0.3
    signal_gain: float = 2.0
    prototype_seed: int = 0
    seed: int = 0

    def validate(self) -> None:
        for name in ("T", "D", "C"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.smoothness < 1.0:
            raise InvalidArgumentError(f"smoothness must be in [0, 1), got {self.smoothness}")
        if not 0.0 < self.salient_fraction <= 1.0:
            raise InvalidArgumentError(f"salient_fraction must be in (0, 1], got {self.salient_fraction}")
        if self.noise_scale < 0 or self.signal_gain < 0:
            raise InvalidArgumentError("noise_scale and signal_gain must be non-negative")
        if self.seed < 0 or self.prototype_seed < 0:
            raise InvalidArgumentError("seeds must be unsigned integers")


@dataclass(frozen=True, eq=False)
class SyntheticVideo:
    frames: np.ndarray  # (T, D)
    label: int
    salient_mask: np.ndarray  # (T,) bool
    smoothness: float
    seed: int
    C: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        mask = np.asarray(self.salient_mask, dtype=bool)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise InvalidArgumentError(f"frames must be a non-empty (T, D) array, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InvalidArgumentError("frames contain non-finite values")
        if mask.shape != (frames.shape[0],) or not mask.any():
            raise InvalidArgumentError("salient_mask must have length T and at least one true entry")
        if not 0 <= self.label < self.C:
            raise InvalidArgumentError(f"label {self.label} out of range for C={self.C}")
        frames.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "salient_mask", mask)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "D": self.D,
            "C": self.C,
            "label": int(self.label),
            "smoothness": float(self.smoothness),
            "seed": int(self.seed),
            "frames": self.frames.tolist(),
            "salient_mask": [bool(b) for b in self.salient_mask],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticVideo":
        frames = np.array(doc["frames"], dtype=np.float64).reshape(doc["T"], doc["D"])
        return cls(frames, int(doc["label"]), np.array(doc["salient_mask"], dtype=bool),
                   float(doc["smoothness"]), int(doc["seed"]), int(doc["C"]))

    def equals(self, other: "SyntheticVideo") -> bool:
        return (self.label == other.label and self.seed == other.seed and self.C == other.C
                and self.smoothness == other.smoothness
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.salient_mask, other.salient_mask))


def save_corpus(videos, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([v.to_dict() for v in videos], fh)


def load_corpus(path) -> list[SyntheticVideo]:
    with open(path, encoding="utf-8") as fh:
        return [SyntheticVideo.from_dict(d) for d in json.load(fh)]


@lru_cache(maxsize=64)
def _prototypes(C: int, D: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x5EED])
    g = rng.standard_normal((D, C))
    if C <= D:
        q, r = np.linalg.qr(g)
        protos = (q * np.sign(np.diag(r))).T
    else:
        protos = g.T
    protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    protos.setflags(write=False)
    return protos


def make_prototypes(C: int, D: int, seed: int = 0) -> np.ndarray:
    """C unit-norm class prototypes in D dimensions (orthonormal when C <= D)."""
    if C < 1 or D < 1:
        raise InvalidArgumentError("C and D must be >= 1")
    return _prototypes(C, D, seed)


def corpus_seeds(seed: int, count: int, tag: str = "corpus") -> list[int]:
    """Derive ``count`` independent 32-bit video seeds from a base seed and a tag."""
    tag_words = [b for b in tag.encode("utf-8")]
    ss = np.random.SeedSequence([int(seed), *tag_words])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint32)]


def generate_video(config: GeneratorConfig) -> SyntheticVideo:
    config.validate()
    T, D, C = config.T, config.D, config.C
    rng = np.random.default_rng(config.seed)
    protos = make_prototypes(C, D, config.prototype_seed)
    label = int(rng.integers(C))

    rho = config.smoothness
    innov = math.sqrt(1.0 - rho * rho)
    eps = rng.standard_normal((T, D))
    base = np.empty((T, D))
    base[0] = eps[0]
    for t in range(1, T):
        base[t] = rho * base[t - 1] + innov * eps[t]

    seg_len = math.ceil(config.salient_fraction * T)
    start = int(rng.integers(T - seg_len + 1))
    mask = np.zeros(T, dtype=bool)
    mask[start:start + seg_len] = True

    alpha = config.signal_gain
    signal = np.zeros((T, D))
    signal[mask] = alpha * protos[label]
    if C > 1:
        others = [c for c in range(C) if c != label]
        distractor = others[int(rng.integers(len(others)))]
        signal[~mask] = 0.5 * alpha * protos[distractor]

    noise = config.noise_scale * rng.standard_normal((T, D))
    return SyntheticVideo(base + signal + noise, label, mask, rho, int(config.seed), C)


def generate_corpus(config: GeneratorConfig, count: int, seed: int, tag: str = "corpus") -> list[SyntheticVideo]:
    from dataclasses import replace

    return [generate_video(replace(config, seed=s)) for s in corpus_seeds(seed, count, tag)]


class CallCounter:
    """Thread-safe monotone counter of classifier evaluations."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0

    def increment(self, k: int = 1) -> None:
        with self._lock:
            self._value += k

    @property
    def value(self) -> int:
        return self._value

    def reset(self) -> None:
        with self._lock:
            self._value = 0

    def __getstate__(self):
        return {"value": self._value}

    def __setstate__(self, state):
        self._lock = threading.Lock()
        self._value = state["value"]


@dataclass(frozen=True, eq=False)
class ClassifierSpec:
    """A frozen classifier: mean-logit pooling over class prototypes.

    The redundancy-penalized kind subtracts ``interaction_strength`` times the
    mean pairwise relevance of the selected frames from the true-class logit,
    so picking near-duplicate frames costs confidence.
    """

    kind: str
    prototypes: np.ndarray  # (C, D)
    interaction_strength: float = 0.0
    temperature: float = 1.0
    kernel: KernelConfig | None = None
    calls: CallCounter = field(default_factory=CallCounter)

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise InvalidArgumentError(f"unknown classifier kind {self.kind!r}")
        protos = np.asarray(self.prototypes, dtype=np.float64)
        if protos.ndim != 2:
            raise InvalidArgumentError("prototypes must be a (C, D) array")
        if not np.allclose(np.linalg.norm(protos, axis=1), 1.0, atol=1e-12):
            raise InvalidArgumentError("prototypes must be unit-norm")
        if self.kind == ADDITIVE and self.interaction_strength != 0:
            raise InvalidArgumentError("additive classifier must have interaction_strength = 0")
        if self.interaction_strength < 0:
            raise InvalidArgumentError("interaction_strength must be non-negative")
        if not self.temperature > 0:
            raise InvalidArgumentError("temperature must be positive")
        object.__setattr__(self, "prototypes", protos)
        if self.kernel is None:
            # sigma^2 = D matches the median heuristic for unit-variance features
            object.__setattr__(self, "kernel", KernelConfig(sigma=math.sqrt(protos.shape[1])))

    @property
    def C(self) -> int:
        return self.prototypes.shape[0]

    @property
    def D(self) -> int:
        return self.prototypes.shape[1]


def make_classifier(kind: str, C: int, D: int, prototype_seed: int = 0,
                    interaction_strength: float | None = None, temperature: float = 1.0,
                    bandwidth: float | None = None) -> ClassifierSpec:
    if interaction_strength is None:
        interaction_strength = 0.5 if kind == REDUNDANCY_PENALIZED else 0.0
    kernel = KernelConfig(sigma=bandwidth) if bandwidth is not None else None
    return ClassifierSpec(kind, make_prototypes(C, D, prototype_seed), interaction_strength,
                          temperature, kernel)


def frame_logits(spec: ClassifierSpec, frames: np.ndarray) -> np.ndarray:
    """Per-frame class logits, <frame, prototype> / temperature. Does not count as a call."""
    if frames.shape[-1] != spec.D:
        raise InvalidArgumentError(f"frame dimension {frames.shape[-1]} != prototype dimension {spec.D}")
    return frames @ spec.prototypes.T / spec.temperature


def _clip_logits(spec: ClassifierSpec, video: SyntheticVideo, subset: tuple[int, ...]) -> np.ndarray:
    sel = video.frames[list(subset)]
    logits = frame_logits(spec, sel).mean(axis=0)
    if spec.kind == REDUNDANCY_PENALIZED and len(subset) > 1:
        k = len(subset)
        rel = pairwise_relevance(sel, spec.kernel)
        mean_pair = (rel.sum() - np.trace(rel)) / (k * (k - 1))
        logits = logits.copy()
        logits[video.label] -= spec.interaction_strength * mean_pair
    return logits


def classify_clip(spec: ClassifierSpec, video: SyntheticVideo, subset) -> np.ndarray:
    """Class confidences for the clip made of ``subset`` frames (counts one call)."""
    idx = validate_index_set(subset, video.T)
    if video.D != spec.D:
        raise InvalidArgumentError(f"video dimension {video.D} != classifier dimension {spec.D}")
    if video.C != spec.C:
        raise InvalidArgumentError(f"video has {video.C} classes, classifier has {spec.C}")
    spec.calls.increment()
    return softmax_rows(_clip_logits(spec, video, idx)[None, :])[0]


def classify_frame(spec: ClassifierSpec, video: SyntheticVideo, t: int) -> np.ndarray:
    if not 0 <= t < video.T:
        raise InvalidArgumentError(f"frame index {t} out of range for T={video.T}")
    return classify_clip(spec, video, (t,))


def confidence_matrix(spec: ClassifierSpec, video: SyntheticVideo) -> np.ndarray:
    """T x C matrix of single-frame confidences (T calls)."""
    return np.stack([classify_frame(spec, video, t) for t in range(video.T)])
