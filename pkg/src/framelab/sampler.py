"""A small trainable frame sampler distilled from per-frame classifier confidence.

The network sees a degraded view of each frame: a fixed projection to half
the feature dimension plus noise. One ReLU layer feeds two heads that give
an importance score and class logits per frame. Training
combines a pairwise hinge ranking loss on the importance scores, with targets
taken from the frozen classifier, and cross-entropy on the mean class logits.
Gradients are derived by hand.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import ClassifierSpec, SyntheticVideo, classify_clip, confidence_matrix
from .core import InvalidArgumentError, softmax, top_n_indices
from .policies import AggregationMode, PolicyResult, sampling_fidelity

PARAM_NAMES = ("W_f", "b_f", "w_s", "b_s", "W_c", "b_c")
VIEW_NOISE = 0.1

RANKING = "ranking"
MSE = "mse"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class SamplerModel:
    """Parameters of the sampler plus its fixed input projection.

    ``projection`` (D x D_in) is not trained; it stands in for the spatial
    down-sampling of the sampler's input.
    """

    projection: np.ndarray
    W_f: np.ndarray
    b_f: np.ndarray
    w_s: np.ndarray
    b_s: np.ndarray
    W_c: np.ndarray
    b_c: np.ndarray
    seed: int = 0
    view_noise: float = VIEW_NOISE

    @property
    def D(self) -> int:
        return self.projection.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W_f.shape[1]

    @property
    def C(self) -> int:
        return self.W_c.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "SamplerModel":
        return SamplerModel(self.projection.copy(), *(p.copy() for p in self.params().values()),
                            seed=self.seed, view_noise=self.view_noise)

    def to_dict(self) -> dict:
        tensors = {"projection": self.projection, **self.params()}
        return {
            "D": self.D,
            "D_h": self.hidden_dim,
            "C": self.C,
            "seed": self.seed,
            "view_noise": self.view_noise,
            "parameters": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                           for k, v in tensors.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplerModel":
        t = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
             for k, v in doc["parameters"].items()}
        model = cls(t["projection"], *(t[n] for n in PARAM_NAMES), seed=int(doc["seed"]),
                    view_noise=float(doc.get("view_noise", VIEW_NOISE)))
        if (model.D, model.hidden_dim, model.C) != (doc["D"], doc["D_h"], doc["C"]):
            raise InvalidArgumentError("checkpoint shapes disagree with declared D, D_h, C")
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SamplerModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def pca_projection(corpus, d_in: int) -> np.ndarray:
    """Top ``d_in`` principal directions of all frames in ``corpus`` (D x d_in).

    Labels are not used. Each direction's sign is fixed so that its largest
    absolute entry is positive, which makes the fit deterministic.
    """
    X = np.concatenate([v.frames for v in corpus])
    X = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    basis = vt[:d_in].T.copy()
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(d_in)])
    return basis * flip


def init_model(D: int, C: int, hidden_dim: int = 64, seed: int = 0, corpus=None) -> SamplerModel:
    """He-initialized weights and zero biases.

    The input projection maps D features to D // 2. With ``corpus`` it is the
    principal subspace of those frames, otherwise a random orthonormal basis.
    """
    if D < 1 or C < 1 or hidden_dim < 1:
        raise InvalidArgumentError("D, C and hidden_dim must be >= 1")
    rng = np.random.default_rng([seed, 0x5A3])
    d_in = max(1, D // 2)
    q, _ = np.linalg.qr(rng.standard_normal((D, d_in)))
    if corpus is not None:
        q = pca_projection(corpus, d_in)
    return SamplerModel(
        projection=q,
        W_f=rng.standard_normal((d_in, hidden_dim)) * math.sqrt(2.0 / d_in),
        b_f=np.zeros(hidden_dim),
        w_s=rng.standard_normal(hidden_dim) * math.sqrt(1.0 / hidden_dim),
        b_s=np.zeros(1),
        W_c=rng.standard_normal((hidden_dim, C)) * math.sqrt(1.0 / hidden_dim),
        b_c=np.zeros(C),
        seed=seed,
    )


def sampler_view(model: SamplerModel, video: SyntheticVideo) -> np.ndarray:
    """The degraded frames the sampler sees; deterministic per (model seed, video seed)."""
    if video.D != model.D:
        raise InvalidArgumentError(f"video dimension {video.D} != model input dimension {model.D}")
    view = video.frames @ model.projection
    if model.view_noise > 0:
        rng = np.random.default_rng([model.seed, video.seed, 0x71E])
        view = view + model.view_noise * rng.standard_normal(view.shape)
    return view


@dataclass
class ForwardPass:
    view: np.ndarray
    pre: np.ndarray  # (T, D_h) before ReLU
    hidden: np.ndarray
    scores: np.ndarray  # (T,) raw importance
    frame_logits: np.ndarray  # (T, C)
    mean_logits: np.ndarray

    @property
    def importance(self) -> np.ndarray:
        return softmax(self.scores)

    @property
    def video_prediction(self) -> np.ndarray:
        return softmax(self.mean_logits)


def forward(model: SamplerModel, video: SyntheticVideo) -> ForwardPass:
    x = sampler_view(model, video)
    pre = x @ model.W_f + model.b_f
    h = np.maximum(pre, 0.0)
    scores = h @ model.w_s + model.b_s[0]
    logits = h @ model.W_c + model.b_c
    return ForwardPass(x, pre, h, scores, logits, logits.mean(axis=0))


def ranking_loss(targets, scores, gamma: float = 0.05, printed_sign: bool = False):
    """Pairwise hinge loss over all pairs (i, j) with targets[i] > targets[j].

    Each such pair costs max(gamma - (s_i - s_j), 0), which is zero once the
    scores respect the target order by at least ``gamma``. ``printed_sign``
    switches to max(gamma + s_i - s_j, 0), a variant kept for comparison
    that rewards reversing the order. Returns (loss, d loss / d scores).
    """
    p = np.asarray(targets, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if p.shape != s.shape or p.ndim != 1:
        raise InvalidArgumentError(f"length mismatch: {p.shape} vs {s.shape}")
    if p.size < 2:
        raise InvalidArgumentError("ranking loss needs at least two frames")
    if gamma < 0:
        raise InvalidArgumentError("gamma must be non-negative")
    pairs = p[:, None] > p[None, :]
    diff = s[:, None] - s[None, :]
    margin = gamma + diff if printed_sign else gamma - diff
    # strict inequality: the kink takes the zero branch
    active = pairs & (margin > 0)
    loss = float(np.sum(np.where(active, margin, 0.0)))
    sign = 1.0 if printed_sign else -1.0
    grad = sign * (active.sum(axis=1) - active.sum(axis=0)).astype(np.float64)
    return loss, grad


def mse_loss(targets, scores):
    """Squared distance between softmax(scores) and the target distribution."""
    p = np.asarray(targets, dtype=np.float64)
    q = softmax(scores)
    if p.shape != q.shape:
        raise InvalidArgumentError(f"length mismatch: {p.shape} vs {q.shape}")
    r = q - p
    g = 2.0 * r
    return float(r @ r), q * (g - q @ g)


def label_guidance_loss(y_hat, y: int):
    """Cross-entropy -ln y_hat[y]; the gradient is with respect to the logits."""
    q = np.asarray(y_hat, dtype=np.float64)
    if not 0 <= y < q.size:
        raise InvalidArgumentError(f"label {y} out of range for {q.size} classes")
    grad = q.copy()
    grad[y] -= 1.0
    with np.errstate(divide="ignore"):
        return float(-np.log(q[y])), grad


def teacher_targets(teacher: np.ndarray, label: int, mode: AggregationMode) -> np.ndarray:
    """Softmax over frames of the aggregated per-frame confidence."""
    return softmax(mode.reduce(np.asarray(teacher, dtype=np.float64), label))


@dataclass
class LossSetup:
    """Which loss terms are used; ``lam`` weights the importance term."""

    lam: float = 0.99
    gamma: float = 0.05
    importance_loss: str = RANKING
    mode: AggregationMode = AggregationMode.MAX_OVER_CLASSES
    printed_sign: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgumentError(f"lambda must be in [0, 1], got {self.lam}")
        if self.importance_loss not in (RANKING, MSE):
            raise InvalidArgumentError(f"unknown importance loss {self.importance_loss!r}")


def total_loss(model: SamplerModel, video: SyntheticVideo, teacher: np.ndarray,
               setup: LossSetup = LossSetup()):
    """Weighted sum of the importance loss and label guidance, with gradients.

    Returns (loss, grads) where grads maps parameter name to an array shaped
    like the parameter. Weight decay is not included.
    """
    teacher = np.asarray(teacher, dtype=np.float64)
    if teacher.shape != (video.T, model.C):
        raise InvalidArgumentError(f"teacher shape {teacher.shape} != ({video.T}, {model.C})")
    fp = forward(model, video)
    targets = teacher_targets(teacher, video.label, setup.mode)
    T = video.T

    if setup.importance_loss == RANKING:
        l_imp, g_scores = ranking_loss(targets, fp.scores, setup.gamma, setup.printed_sign)
    else:
        l_imp, g_scores = mse_loss(targets, fp.scores)
    l_lg, g_mean = label_guidance_loss(fp.video_prediction, video.label)

    lam = setup.lam
    loss = lam * l_imp + (1.0 - lam) * l_lg
    d_scores = lam * g_scores
    d_logits = np.broadcast_to((1.0 - lam) * g_mean / T, (T, model.C))

    h = fp.hidden
    d_hidden = np.outer(d_scores, model.w_s) + d_logits @ model.W_c.T
    d_pre = d_hidden * (fp.pre > 0)
    grads = {
        "W_f": fp.view.T @ d_pre,
        "b_f": d_pre.sum(axis=0),
        "w_s": h.T @ d_scores,
        "b_s": np.array([d_scores.sum()]),
        "W_c": h.T @ d_logits,
        "b_c": d_logits.sum(axis=0),
    }
    return loss, grads


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lam: float = 0.99
    gamma: float = 0.05
    epochs: int = 100
    batch_size: int = 2
    seed: int = 0
    importance_loss: str = RANKING
    mode: str = "max"
    printed_sign: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgumentError("lambda must be in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        AggregationMode(self.mode)

    def loss_setup(self) -> LossSetup:
        return LossSetup(self.lam, self.gamma, self.importance_loss, AggregationMode(self.mode),
                         self.printed_sign)


def cosine_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Cosine annealing from base_lr at epoch 0 to 0 at the final epoch, no warm-up."""
    if epochs <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


class MomentumSGD:
    """SGD with heavy-ball momentum and decoupled weight decay."""

    def __init__(self, model: SamplerModel, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in model.params().items()}

    def step(self, model: SamplerModel, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, param in model.params().items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            param -= lr * v
            if self.weight_decay:
                param *= 1.0 - lr * self.weight_decay


def infer(model: SamplerModel, video: SyntheticVideo, N: int, spec: ClassifierSpec) -> PolicyResult:
    """Select the top-N frames by predicted importance and classify that clip once."""
    if not 1 <= N <= video.T:
        raise InvalidArgumentError(f"need 1 <= N <= T, got N={N}, T={video.T}")
    selected = top_n_indices(forward(model, video).scores, N)
    conf = classify_clip(spec, video, selected)
    return PolicyResult("sampler", selected, float(conf[video.label]), 1)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    heldout_fidelity: float
    heldout_confidence: float


@dataclass
class HeldOut:
    """Held-out videos with their precomputed semi-optimal selections."""

    videos: list[SyntheticVideo]
    reference: list[tuple[int, ...]]
    N: int


def make_heldout(spec: ClassifierSpec, videos, N: int, mode: AggregationMode,
                 teachers: list[np.ndarray] | None = None) -> HeldOut:
    videos = list(videos)
    if teachers is None:
        teachers = [confidence_matrix(spec, v) for v in videos]
    ref = [top_n_indices(mode.reduce(t, v.label), N) for v, t in zip(videos, teachers)]
    return HeldOut(videos, ref, N)


def evaluate_sampler(model: SamplerModel, spec: ClassifierSpec, heldout: HeldOut) -> tuple[float, float]:
    """Mean fidelity to the reference selections and mean clip confidence."""
    fid, conf = [], []
    for video, ref in zip(heldout.videos, heldout.reference):
        r = infer(model, video, heldout.N, spec)
        fid.append(sampling_fidelity(r.selected, ref))
        conf.append(r.clip_confidence)
    return float(np.mean(fid)), float(np.mean(conf))


@dataclass
class TrainResult:
    model: SamplerModel
    log: list[EpochLog] = field(default_factory=list)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["epoch", "lr", "train_loss", "heldout_fidelity", "heldout_confidence"])
        for e in self.log:
            w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.heldout_fidelity),
                        repr(e.heldout_confidence)])
        return buf.getvalue()


def train(model: SamplerModel, corpus, spec: ClassifierSpec, config: TrainConfig,
          heldout: HeldOut | None = None, teachers: list[np.ndarray] | None = None) -> TrainResult:
    """Mini-batch momentum SGD on the total loss; returns the final-epoch model.

    Teacher confidences are computed once per video with the frozen classifier
    unless passed in. Batch gradients are averaged in video-index order.
    """
    corpus = list(corpus)
    model = model.copy()
    if config.epochs == 0:
        return TrainResult(model, [])
    if not corpus:
        raise InvalidArgumentError("training corpus must not be empty")
    if teachers is None:
        teachers = [confidence_matrix(spec, v) for v in corpus]
    setup = config.loss_setup()
    opt = MomentumSGD(model, config.momentum, config.weight_decay)
    rng = np.random.default_rng([config.seed, 0x7EA1])
    log = []
    for epoch in range(config.epochs):
        lr = cosine_lr(config.learning_rate, epoch, config.epochs)
        order = rng.permutation(len(corpus))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = sorted(order[start:start + config.batch_size])
            if not all(np.all(np.isfinite(v)) for v in model.params().values()):
                raise TrainingDivergedError(
                    f"non-finite parameters at epoch {epoch}, batch {b}, learning rate {lr!r}")
            acc = {k: np.zeros_like(v) for k, v in model.params().items()}
            batch_loss = 0.0
            for i in batch:
                loss, grads = total_loss(model, corpus[i], teachers[i], setup)
                batch_loss += loss
                for k in acc:
                    acc[k] += grads[k]
            batch_loss /= len(batch)
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b}, learning rate {lr!r}")
            for k in acc:
                acc[k] /= len(batch)
            opt.step(model, acc, lr)
            losses.append(batch_loss)
        if heldout is not None:
            fid, conf = evaluate_sampler(model, spec, heldout)
        else:
            fid = conf = float("nan")
        log.append(EpochLog(epoch, lr, float(np.mean(losses)), fid, conf))
    return TrainResult(model, log)

