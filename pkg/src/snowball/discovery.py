"""Confident-sample discovery by nearest class center in feature space.

Class centers are the per-class means of penultimate-layer features over the
current labelled training set. Each pool sample is pseudo-labelled by its
nearest center (Euclidean, on raw features); the candidates closest to their
center are presumed most reliable. Reports keep every candidate in rank
order so selection, the master's extra candidates and noise measurement all
read off the same structure.

When several model snapshots are available their distances can be fused:
averaged directly, computed in a concatenated feature space, or averaged as
per-model sorting ranks. Pseudo-labels under fusion are majority votes with
ties going to the most recent model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import network as net
from .errors import ConfigError, DiscoveryError
from .network import ModelParams

STRATEGIES = ("min", "random", "max")
FUSIONS = ("single", "average_distance", "feature_cascade", "average_sorting_score")

REPORT_CSV_HEADER = ("sample_id", "assigned_label", "true_label", "distance", "rank", "selected")


@dataclass(frozen=True)
class DiscoveryReport:
    """Ranked pseudo-labelling of an unlabelled pool.

    Rows are sorted by ascending score (distance, or fused score) with ties
    broken by ascending sample id; a row's index is its rank. ``distances``
    holds plain Euclidean distances for single-model and feature_cascade
    reports, mean distances for average_distance and mean 0-based ranks for
    average_sorting_score. ``selected`` is all-False until `select_samples`.
    The raw input rows ride along so downstream consumers (the master's
    extra-candidate refinement) need no access to the original pool.
    """

    sample_ids: np.ndarray   # (n,) int
    inputs: np.ndarray       # (n, d) raw input rows, in rank order
    features: np.ndarray     # (n, f) features behind the scores (last model's for averaging fusions)
    labels: np.ndarray       # (n,) assigned pseudo-labels
    distances: np.ndarray    # (n,) score used for ranking
    selected: np.ndarray     # (n,) bool
    centers: np.ndarray      # (classes, f) centers in the scoring feature space
    strategy: str = "min"
    fusion: str = "single"
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(len(self.sample_ids))

    def selected_ids(self) -> np.ndarray:
        return self.sample_ids[self.selected]


def compute_class_centers(model: ModelParams, x: np.ndarray, y: np.ndarray,
                          class_count: int | None = None) -> np.ndarray:
    """Per-class mean feature vectors over a labelled set."""
    class_count = model.class_count if class_count is None else class_count
    y = np.asarray(y, dtype=int)
    feats = net.forward_batch(model, x).features
    centers = np.empty((class_count, feats.shape[1]))
    for c in range(class_count):
        mask = y == c
        if not np.any(mask):
            raise DiscoveryError(f"class {c} has no labelled samples, cannot place its center")
        centers[c] = feats[mask].mean(axis=0)
    return centers


def _nearest_center(feats: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center label (ties to the lowest class index) and distance."""
    dists = np.linalg.norm(feats[:, None, :] - centers[None, :, :], axis=2)
    labels = np.argmin(dists, axis=1)
    return labels, dists[np.arange(len(feats)), labels]


def _rank_order(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Sort by ascending score, ties by ascending sample id."""
    return np.lexsort((ids, scores))


def _build_report(ids, inputs, feats, labels, scores, centers, fusion) -> DiscoveryReport:
    order = _rank_order(scores, ids)
    return DiscoveryReport(
        sample_ids=np.asarray(ids)[order], inputs=np.asarray(inputs)[order],
        features=np.asarray(feats)[order],
        labels=np.asarray(labels)[order], distances=np.asarray(scores)[order],
        selected=np.zeros(len(order), dtype=bool), centers=centers, fusion=fusion)


def assign_pseudo_labels(model: ModelParams, pool_x: np.ndarray, pool_ids: np.ndarray,
                         train_x: np.ndarray, train_y: np.ndarray,
                         class_count: int | None = None) -> DiscoveryReport:
    """Pseudo-label a pool by nearest class center of a single model."""
    if len(pool_x) == 0:
        raise DiscoveryError("unlabelled pool is empty")
    centers = compute_class_centers(model, train_x, train_y, class_count)
    feats = net.forward_batch(model, pool_x).features
    labels, dists = _nearest_center(feats, centers)
    return _build_report(pool_ids, pool_x, feats, labels, dists, centers, "single")


def _majority_vote(per_model_labels: list[np.ndarray], class_count: int) -> np.ndarray:
    """Majority label per sample; ties take the most recent model's label."""
    stacked = np.stack(per_model_labels, axis=1)  # (n, models)
    counts = np.stack([np.sum(stacked == c, axis=1) for c in range(class_count)], axis=1)
    top = counts.max(axis=1)
    tied = np.sum(counts == top[:, None], axis=1) > 1
    winners = np.argmax(counts, axis=1)
    return np.where(tied, stacked[:, -1], winners)


def fuse_distances(models: list[ModelParams], pool_x: np.ndarray, pool_ids: np.ndarray,
                   train_x: np.ndarray, train_y: np.ndarray, fusion: str,
                   class_count: int | None = None) -> DiscoveryReport:
    """Pseudo-label a pool using 1-3 model snapshots, oldest first.

    single demands exactly one model and matches `assign_pseudo_labels`;
    the other fusions accept 1-3 and degrade to single-model behaviour when
    given one model (or three identical ones).
    """
    if fusion not in FUSIONS:
        raise ConfigError(f"unknown fusion {fusion!r}, expected one of {FUSIONS}")
    if not 1 <= len(models) <= 3:
        raise ConfigError(f"fusion takes 1-3 models, got {len(models)}")
    if fusion == "single":
        if len(models) != 1:
            raise ConfigError(f"fusion 'single' takes exactly 1 model, got {len(models)}")
        return assign_pseudo_labels(models[0], pool_x, pool_ids, train_x, train_y, class_count)
    if len(pool_x) == 0:
        raise DiscoveryError("unlabelled pool is empty")
    class_count = models[0].class_count if class_count is None else class_count

    per_feats, per_centers, per_labels, per_dists = [], [], [], []
    for model in models:
        centers = compute_class_centers(model, train_x, train_y, class_count)
        feats = net.forward_batch(model, pool_x).features
        labels, dists = _nearest_center(feats, centers)
        per_feats.append(feats)
        per_centers.append(centers)
        per_labels.append(labels)
        per_dists.append(dists)

    if fusion == "feature_cascade":
        # the center of concatenated features is the concatenation of centers
        feats = np.concatenate(per_feats, axis=1)
        centers = np.concatenate(per_centers, axis=1)
        labels, dists = _nearest_center(feats, centers)
        return _build_report(pool_ids, pool_x, feats, labels, dists, centers, fusion)
    labels = _majority_vote(per_labels, class_count)
    if fusion == "average_distance":
        scores = np.mean(per_dists, axis=0)
    else:  # average_sorting_score: mean of per-model 0-based ranks
        pool_ids = np.asarray(pool_ids)
        rank_sum = np.zeros(len(pool_ids))
        for dists in per_dists:
            order = _rank_order(dists, pool_ids)
            ranks = np.empty(len(pool_ids))
            ranks[order] = np.arange(len(pool_ids))
            rank_sum += ranks
        scores = rank_sum / len(models)
    return _build_report(pool_ids, pool_x, per_feats[-1], labels, scores, per_centers[-1], fusion)


def select_samples(report: DiscoveryReport, n: int, strategy: str = "min",
                   rng_seed=0) -> DiscoveryReport:
    """Flag n report rows as selected.

    min takes the n smallest scores (the confident choice), max the n
    largest, random a uniform draw without replacement seeded by rng_seed.
    All ties break by ascending sample id. Asking for more rows than exist
    selects everything and sets the truncated flag.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown selection strategy {strategy!r}, expected one of {STRATEGIES}")
    if n <= 0:
        raise ConfigError(f"selection size must be positive, got {n}")
    size = len(report)
    take = min(n, size)
    if strategy == "min":
        picks = np.arange(take)
    elif strategy == "max":
        picks = _rank_order(-report.distances, report.sample_ids)[:take]
    else:
        rng = np.random.default_rng(rng_seed)
        picks = rng.choice(size, size=take, replace=False)
    selected = np.zeros(size, dtype=bool)
    selected[picks] = True
    return replace(report, selected=selected, strategy=strategy, truncated=n > size)


def select_balanced(report: DiscoveryReport, n: int, class_count: int,
                    strategy: str = "min", rng_seed=0) -> DiscoveryReport:
    """Class-balanced variant of `select_samples`.

    Each class gets a quota of n // class_count (remainder spread over the
    lowest class indices) filled in strategy order from rows pseudo-labelled
    with that class; unfillable quota falls back to the global strategy
    order over the remaining rows.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown selection strategy {strategy!r}, expected one of {STRATEGIES}")
    if n <= 0:
        raise ConfigError(f"selection size must be positive, got {n}")
    size = len(report)
    take = min(n, size)
    if strategy == "max":
        order = _rank_order(-report.distances, report.sample_ids)
    elif strategy == "random":
        order = np.random.default_rng(rng_seed).permutation(size)
    else:
        order = np.arange(size)
    quota = np.full(class_count, take // class_count)
    quota[: take % class_count] += 1
    selected = np.zeros(size, dtype=bool)
    for c in range(class_count):
        rows = order[report.labels[order] == c][: quota[c]]
        selected[rows] = True
    shortfall = take - int(selected.sum())
    if shortfall > 0:
        rest = order[~selected[order]][:shortfall]
        selected[rest] = True
    return replace(report, selected=selected, strategy=strategy, truncated=n > size)


def noise_rate(report: DiscoveryReport, true_label_of: dict[int, int]) -> float:
    """Fraction of selected rows whose pseudo-label disagrees with the truth.

    Evaluation-only: ground truth never feeds back into training. An empty
    selection counts as 0.
    """
    ids = report.sample_ids[report.selected]
    if len(ids) == 0:
        return 0.0
    truth = np.array([true_label_of[int(i)] for i in ids])
    return float(np.mean(report.labels[report.selected] != truth))


def write_report_csv(path, report: DiscoveryReport, true_label_of: dict[int, int]) -> None:
    """Dump a report: sample_id, assigned_label, true_label, distance, rank, selected."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(REPORT_CSV_HEADER)
        for rank, (sid, label, dist, sel) in enumerate(zip(
                report.sample_ids, report.labels, report.distances, report.selected)):
            writer.writerow([int(sid), int(label), true_label_of[int(sid)],
                             repr(float(dist)), rank, int(sel)])
