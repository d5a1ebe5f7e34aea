"""Losses, exponential moving averages and the inner training loop.

The student is the only network touched by gradient descent. The teacher is
an exponential moving average of student snapshots, refreshed every step; a
master network (when present) contributes a second consistency target. The
student objective is

    total = lambda1 * classification + lambda2 * (teacher + master consistency)

where classification is averaged over the labelled rows of a minibatch only
and the consistency terms cover every row. lambda2 follows a normalised
sigmoid ramp so early, unreliable guidance carries little weight.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import network as net
from .data import augment
from .errors import ConfigError, DivergenceError, NumericsError
from .network import EPS_LOG, ModelParams, MomentumState

CONSISTENCY_KINDS = ("ce", "mse")
UNLABELED = -1  # label marker for pool rows inside a mixed minibatch


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of the student objective for one batch."""

    classification: float
    consistency_teacher: float
    consistency_master: float
    lambda1: float
    lambda2: float
    total: float

    @classmethod
    def combine(cls, classification: float, consistency_teacher: float,
                consistency_master: float, lambda1: float, lambda2: float) -> LossBreakdown:
        total = lambda1 * classification + lambda2 * (consistency_teacher + consistency_master)
        return cls(classification, consistency_teacher, consistency_master,
                   lambda1, lambda2, total)


@dataclass(frozen=True)
class EmaState:
    """Exponential moving average over a stream of parameter snapshots."""

    decay: float
    averaged: ModelParams
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ConfigError(f"EMA decay must lie in [0, 1], got {self.decay}")


def ema_update(state: EmaState, source: ModelParams) -> EmaState:
    """averaged <- decay * averaged + (1 - decay) * source."""
    averaged = state.decay * state.averaged + (1.0 - state.decay) * source
    return EmaState(state.decay, averaged, state.step_count + 1)


def one_hot(y: np.ndarray, class_count: int) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    out = np.zeros((len(y), class_count))
    out[np.arange(len(y)), y] = 1.0
    return out


def cross_entropy(target: np.ndarray, pred: np.ndarray) -> float:
    """-sum target_i * log(max(pred_i, 1e-12)) for two probability vectors."""
    target = np.asarray(target, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if target.shape != pred.shape:
        raise ConfigError(f"distribution shapes differ: {target.shape} vs {pred.shape}")
    return float(-np.sum(target * np.log(np.maximum(pred, EPS_LOG))))


def _mean_ce(targets: np.ndarray, probs: np.ndarray) -> float:
    return float(np.mean(-np.sum(targets * np.log(np.maximum(probs, EPS_LOG)), axis=1)))


def _mean_mse(targets: np.ndarray, probs: np.ndarray) -> float:
    return float(np.mean(np.sum((probs - targets) ** 2, axis=1) / probs.shape[1]))


def classification_loss(student: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy against one-hot labels. Every sample must be labelled."""
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ConfigError("classification batch is empty")
    if np.any(y < 0):
        raise ValueError("unlabeled sample in classification batch")
    probs = net.forward_batch(student, x).probs
    return _mean_ce(one_hot(y, student.class_count), probs)


def consistency_loss(student: ModelParams, guide: ModelParams, x: np.ndarray, *,
                     sigma_aug: float = 0.0, perturb_seed: int = 0,
                     kind: str = "ce") -> float:
    """Mean divergence between the guide's and the student's predictions.

    Student and guide each see an independently perturbed copy of the batch
    (student view drawn first); the guide's output is the target and receives
    no gradient. kind selects cross-entropy (default) or mean squared error
    over the softmax outputs.
    """
    if kind not in CONSISTENCY_KINDS:
        raise ConfigError(f"unknown consistency kind {kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(perturb_seed)]))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    student_view = augment(x, sigma_aug, rng)
    guide_view = augment(x, sigma_aug, rng)
    p_s = net.forward_batch(student, student_view).probs
    p_g = net.forward_batch(guide, guide_view).probs
    return _mean_ce(p_g, p_s) if kind == "ce" else _mean_mse(p_g, p_s)


def student_loss(student: ModelParams, teacher: ModelParams,
                 master: ModelParams | None, x: np.ndarray, y: np.ndarray,
                 lambda1: float, lambda2: float, *, sigma_aug: float = 0.0,
                 perturb_seed: int = 0, kind: str = "ce",
                 master_weight: float = 1.0) -> LossBreakdown:
    """Full objective over one minibatch.

    Rows with y == -1 are unlabelled and only enter the consistency terms.
    Teacher and master share one perturbed guide view (so identical guides
    yield identical terms); the student sees its own perturbed view, used for
    both the classification and the consistency terms.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(perturb_seed)]))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=int)
    student_view = augment(x, sigma_aug, rng)
    guide_view = augment(x, sigma_aug, rng)
    breakdown, _ = _objective(student, teacher, master, student_view, guide_view, y,
                              lambda1, lambda2, kind, master_weight, want_grad=False)
    return breakdown


def _objective(student: ModelParams, teacher: ModelParams, master: ModelParams | None,
               student_view: np.ndarray, guide_view: np.ndarray, y: np.ndarray,
               lambda1: float, lambda2: float, kind: str, master_weight: float,
               want_grad: bool) -> tuple[LossBreakdown, ModelParams | None]:
    """Loss breakdown and (optionally) its gradient in one backward pass.

    All loss terms share the student's forward pass on student_view, so the
    combined gradient is a single backpropagation of the summed per-logit
    gradients. Guides are evaluated on guide_view and treated as constants.
    """
    if kind not in CONSISTENCY_KINDS:
        raise ConfigError(f"unknown consistency kind {kind!r}")
    n, class_count = len(y), student.class_count
    out = net.forward_batch(student, student_view)
    p_s = out.probs
    labeled = y >= 0
    n_lab = int(labeled.sum())

    if n_lab:
        targets = one_hot(y[labeled], class_count)
        j_class = _mean_ce(targets, p_s[labeled])
    else:
        j_class = 0.0
    p_t = net.forward_batch(teacher, guide_view).probs
    p_m = net.forward_batch(master, guide_view).probs if master is not None else None
    if kind == "ce":
        j_teacher = _mean_ce(p_t, p_s)
        j_master = master_weight * _mean_ce(p_m, p_s) if p_m is not None else 0.0
    else:
        j_teacher = _mean_mse(p_t, p_s)
        j_master = master_weight * _mean_mse(p_m, p_s) if p_m is not None else 0.0
    breakdown = LossBreakdown.combine(j_class, j_teacher, j_master, lambda1, lambda2)
    if not want_grad:
        return breakdown, None

    dlogits = np.zeros_like(p_s)
    if n_lab:
        dlogits[labeled] += lambda1 * (p_s[labeled] - targets) / n_lab
    if kind == "ce":
        dlogits += lambda2 * (p_s - p_t) / n
        if p_m is not None:
            dlogits += lambda2 * master_weight * (p_s - p_m) / n
    else:
        dlogits += lambda2 * _mse_dlogits(p_s, p_t) / n
        if p_m is not None:
            dlogits += lambda2 * master_weight * _mse_dlogits(p_s, p_m) / n
    return breakdown, net.grad_from_dlogits(student, student_view, dlogits)


def _mse_dlogits(p_s: np.ndarray, p_g: np.ndarray) -> np.ndarray:
    # d/dz of (1/C)*||softmax(z) - p_g||^2 through the softmax Jacobian
    d = 2.0 * (p_s - p_g) / p_s.shape[1]
    return p_s * (d - np.sum(d * p_s, axis=1, keepdims=True))


def lambda2_schedule(step: int, ramp_len: int, lambda2_max: float) -> float:
    """Sigmoid ramp exp(-5*(1-tau)^2), rescaled to hit 0 at step 0 and
    lambda2_max at step >= ramp_len exactly."""
    tau = 1.0 if ramp_len <= 0 else min(1.0, step / ramp_len)
    floor = np.exp(-5.0)
    return lambda2_max * float((np.exp(-5.0 * (1.0 - tau) ** 2) - floor) / (1.0 - floor))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training iteration."""

    steps: int = 300
    labeled_batch: int = 8
    unlabeled_batch: int = 56
    learning_rate: float = 0.05
    momentum: float = 0.9
    l2: float = 0.0
    alpha: float = 0.99          # teacher EMA decay
    lambda1: float = 1.0
    lambda2_max: float = 1.0
    ramp_len: int = 150
    sigma_aug: float = 0.1
    ema_every: int = 1
    ema_warmup: bool = False
    consistency: str = "ce"
    master_weight: float = 1.0

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.labeled_batch < 1:
            raise ConfigError(f"labeled_batch must be >= 1, got {self.labeled_batch}")
        if self.unlabeled_batch < 0:
            raise ConfigError(f"unlabeled_batch must be >= 0, got {self.unlabeled_batch}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.l2 < 0.0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lambda1 < 0.0 or self.lambda2_max < 0.0:
            raise ConfigError("loss weights must be non-negative")
        if self.ramp_len < 0:
            raise ConfigError(f"ramp_len must be >= 0, got {self.ramp_len}")
        if self.sigma_aug < 0.0:
            raise ConfigError(f"sigma_aug must be non-negative, got {self.sigma_aug}")
        if self.ema_every < 1:
            raise ConfigError(f"ema_every must be >= 1, got {self.ema_every}")
        if self.consistency not in CONSISTENCY_KINDS:
            raise ConfigError(f"unknown consistency kind {self.consistency!r}")
        if self.master_weight < 0.0:
            raise ConfigError(f"master_weight must be non-negative, got {self.master_weight}")


@dataclass(frozen=True)
class StepMetrics:
    """One row of the per-step metrics CSV."""

    step: int
    j_c: float
    j_theta_teacher: float
    j_theta_master: float
    j_s: float
    lambda2: float
    train_err: float
    test_err: float


STEP_CSV_HEADER = ("step", "J_C", "J_theta_teacher", "J_theta_master",
                   "J_S", "lambda2", "train_err", "test_err")


def write_step_metrics(path, rows: list[StepMetrics], append: bool = False) -> None:
    """Write (or append to) a per-step metrics CSV; floats use repr so the
    file parses back bit-identically."""
    path = Path(path)
    fresh = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as handle:
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(STEP_CSV_HEADER)
        for r in rows:
            writer.writerow([r.step, repr(r.j_c), repr(r.j_theta_teacher),
                             repr(r.j_theta_master), repr(r.j_s), repr(r.lambda2),
                             repr(r.train_err), repr(r.test_err)])


def read_step_metrics(path) -> list[StepMetrics]:
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader))
        if header != STEP_CSV_HEADER:
            raise ConfigError(f"{path}: unexpected step metrics header {header}")
        return [StepMetrics(int(r[0]), *(float(v) for v in r[1:])) for r in reader]


def train_iteration(student_init: ModelParams, train_x: np.ndarray, train_y: np.ndarray,
                    pool_x: np.ndarray, master: ModelParams | None, cfg: TrainConfig,
                    rng: np.random.Generator, *, eval_x: np.ndarray | None = None,
                    eval_y: np.ndarray | None = None
                    ) -> tuple[ModelParams, ModelParams, list[StepMetrics]]:
    """Run one training iteration and return (student, teacher, step metrics).

    Each step samples a minibatch with replacement: labeled_batch rows from
    the labelled set and unlabeled_batch rows from the pool (fewer when the
    pool is empty). Per step the rng is consumed in a fixed order - labelled
    indices, pool indices, student noise, guide noise - so runs are exactly
    reproducible from the seed. The teacher EMA starts at student_init and
    absorbs the student every ema_every steps; with steps=0 the inputs come
    back unchanged and the teacher equals student_init.

    train_err is the student's error on the labelled set, test_err its error
    on the eval set (nan when no eval set is given), both measured after the
    step's update. Non-finite losses or parameters raise DivergenceError
    carrying the step index.
    """
    cfg.validate()
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=int)
    if len(train_x) == 0:
        raise ConfigError("training set is empty")
    if np.any(train_y < 0):
        raise ConfigError("training set rows must all carry labels")
    n_pool = len(pool_x)

    student = student_init
    teacher_ema = EmaState(cfg.alpha, student_init)
    momentum = MomentumState(cfg.momentum)
    metrics: list[StepMetrics] = []

    for step in range(cfg.steps):
        lam2 = lambda2_schedule(step, cfg.ramp_len, cfg.lambda2_max)
        li = rng.integers(0, len(train_x), size=cfg.labeled_batch)
        if n_pool > 0 and cfg.unlabeled_batch > 0:
            ui = rng.integers(0, n_pool, size=cfg.unlabeled_batch)
            bx = np.concatenate([train_x[li], pool_x[ui]])
            by = np.concatenate([train_y[li], np.full(len(ui), UNLABELED)])
        else:
            bx = train_x[li]
            by = train_y[li]
        student_view = augment(bx, cfg.sigma_aug, rng)
        guide_view = augment(bx, cfg.sigma_aug, rng)

        breakdown, gradient = _objective(
            student, teacher_ema.averaged, master, student_view, guide_view, by,
            cfg.lambda1, lam2, cfg.consistency, cfg.master_weight, want_grad=True)
        assert gradient is not None
        if cfg.l2 > 0.0:
            gradient = ModelParams(
                tuple(g + cfg.l2 * w for g, w in zip(gradient.weights, student.weights)),
                gradient.biases, gradient.activation)
        student, momentum = net.sgd_step(student, gradient, cfg.learning_rate, momentum)

        if not np.isfinite(breakdown.total) or not student.all_finite():
            raise DivergenceError(f"training diverged at step {step}", step=step)
        # Finite weights can still overflow the forward pass once they get
        # large enough; treat that as divergence too so callers see one error.
        try:
            train_err = net.error_rate(student, train_x, train_y)
            test_err = (net.error_rate(student, eval_x, eval_y)
                        if eval_x is not None else float("nan"))
        except NumericsError:
            raise DivergenceError(f"training diverged at step {step}", step=step) from None
        if (step + 1) % cfg.ema_every == 0:
            if cfg.ema_warmup:
                # Cap the decay early on so the teacher tracks the student
                # instead of the random init (the usual mean-teacher ramp).
                eff = min(cfg.alpha, 1.0 - 1.0 / (teacher_ema.step_count + 2))
                teacher_ema = EmaState(eff, teacher_ema.averaged, teacher_ema.step_count)
            teacher_ema = ema_update(teacher_ema, student)

        metrics.append(StepMetrics(step, breakdown.classification,
                                   breakdown.consistency_teacher, breakdown.consistency_master,
                                   breakdown.total, lam2, train_err, test_err))
    return student, teacher_ema.averaged, metrics
