"""Retrieval metrics, navigation summaries, and the confusion matrix.

Precision@K = |P_K n G| / K and Recall@K = |P_K n G| / |G| over the set
G of ground-truth nearest landmarks and the top-K prediction set P_K;
Hit@K is 1 iff at least one ground-truth landmark appears in the top K.
Values are kept as exact rationals and rounded only at display, so the
forced optima (P@K = 1 and R@{1,2,3} = 1/3, 2/3, 1 for a perfect
3-of-3 ranking) are testable without tolerance ambiguity.

Corpus aggregation is an unweighted (macro) mean over records. The
confusion matrix counts (true nearest, predicted top-1) pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import AlignmentError, InputError
from .nametable import LANDMARK_COUNT

DEFAULT_KS = (1, 2, 3)


@dataclass(frozen=True)
class RetrievalScore:
    precision_at: dict[int, Fraction]
    recall_at: dict[int, Fraction]
    hit_at: dict[int, Fraction]

    def __post_init__(self):
        for table in (self.precision_at, self.recall_at, self.hit_at):
            for value in table.values():
                if not 0 <= value <= 1:
                    raise InputError(f"metric value {value} outside [0, 1]")

    def as_float_dict(self, digits: int = 4) -> dict:
        def rounded(table):
            return {k: round(float(v), digits) for k, v in sorted(table.items())}

        return {
            "precision_at": rounded(self.precision_at),
            "recall_at": rounded(self.recall_at),
            "hit_at": rounded(self.hit_at),
        }


def score_retrieval(predictions, truth, ks=DEFAULT_KS) -> RetrievalScore:
    """Set-intersection metrics for one record.

    ``predictions`` is a ranked index sequence (duplicate-free);
    ``truth`` is the ground-truth index collection G.
    """
    preds = [int(p) for p in predictions]
    if len(set(preds)) != len(preds):
        raise InputError(f"duplicate predictions: {preds}")
    truth_set = {int(t) for t in (truth.indices if hasattr(truth, "indices") else truth)}
    if not truth_set:
        raise InputError("empty ground-truth set")
    precision, recall, hit = {}, {}, {}
    for k in ks:
        if k < 1:
            raise InputError(f"K must be >= 1, got {k}")
        inter = len(set(preds[:k]) & truth_set)
        precision[k] = Fraction(inter, k)
        recall[k] = Fraction(inter, len(truth_set))
        hit[k] = Fraction(1 if inter >= 1 else 0)
    return RetrievalScore(precision_at=precision, recall_at=recall, hit_at=hit)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts of (true nearest landmark, predicted top-1), both 1..14."""

    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (LANDMARK_COUNT, LANDMARK_COUNT):
            raise InputError(
                f"confusion matrix must be {LANDMARK_COUNT}x{LANDMARK_COUNT}"
            )
        self.counts.flags.writeable = False

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_table(self) -> str:
        header = "true\\pred " + " ".join(f"{j:>5d}" for j in range(1, LANDMARK_COUNT + 1))
        lines = [header]
        for i in range(LANDMARK_COUNT):
            row = " ".join(f"{int(c):>5d}" for c in self.counts[i])
            lines.append(f"{i + 1:>9d} {row}")
        return "\n".join(lines)

    def save_png(self, path) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 5))
        im = ax.imshow(self.counts, cmap="viridis")
        ax.set_xlabel("predicted top-1")
        ax.set_ylabel("true nearest")
        ticks = list(range(LANDMARK_COUNT))
        ax.set_xticks(ticks, [str(i + 1) for i in ticks])
        ax.set_yticks(ticks, [str(i + 1) for i in ticks])
        fig.colorbar(im, ax=ax, label="count")
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)


def mean_scores(scores: list[RetrievalScore], ks=DEFAULT_KS) -> RetrievalScore:
    """Exact unweighted mean over per-record scores."""
    if not scores:
        raise InputError("cannot aggregate zero scores")
    n = len(scores)
    precision, recall, hit = {}, {}, {}
    for k in ks:
        precision[k] = sum((s.precision_at[k] for s in scores), Fraction(0)) / n
        recall[k] = sum((s.recall_at[k] for s in scores), Fraction(0)) / n
        hit[k] = sum((s.hit_at[k] for s in scores), Fraction(0)) / n
    return RetrievalScore(precision_at=precision, recall_at=recall, hit_at=hit)


def read_predictions(path) -> dict[str, list[int]]:
    """Line-delimited predictions: {"record_id": ..., "indices": [...]}."""
    predictions = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record_id = obj["record_id"]
                indices = [int(i) for i in obj["indices"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise InputError(f"{path}:{line_no}: bad prediction line: {e}") from e
            if record_id in predictions:
                raise AlignmentError(f"duplicate prediction for record {record_id!r}")
            predictions[record_id] = indices
    return predictions


def write_predictions(predictions: dict[str, list[int]], path) -> None:
    with open(path, "w") as f:
        for record_id, indices in predictions.items():
            f.write(
                json.dumps(
                    {"record_id": record_id, "indices": list(indices)},
                    separators=(",", ":"),
                )
                + "\n"
            )


def score_corpus(
    records, predictions: dict[str, list[int]], ks=DEFAULT_KS
) -> tuple[RetrievalScore, ConfusionMatrix]:
    """Macro-averaged metrics plus confusion matrix over a manifest."""
    record_ids = [r.record_id for r in records]
    missing = [rid for rid in record_ids if rid not in predictions]
    extra = [rid for rid in predictions if rid not in set(record_ids)]
    if missing or extra:
        raise AlignmentError(
            f"prediction alignment failure: missing={missing[:10]} "
            f"({len(missing)} total), extra={extra[:10]} ({len(extra)} total)"
        )
    scores = []
    counts = np.zeros((LANDMARK_COUNT, LANDMARK_COUNT), dtype=np.int64)
    for record in records:
        preds = predictions[record.record_id]
        scores.append(score_retrieval(preds, record.ranked, ks))
        true_first = record.ranked.indices[0]
        if preds:
            counts[true_first - 1, preds[0] - 1] += 1
    return mean_scores(scores, ks), ConfusionMatrix(counts=counts)


@dataclass(frozen=True)
class NavigationSummary:
    n_episodes: int
    n_success: int
    success_rate: float
    mean_steps_to_success: float | None
    mean_final_distance_mm: float

    def to_json_obj(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "n_success": self.n_success,
            "success_rate": self.success_rate,
            "mean_steps_to_success": self.mean_steps_to_success,
            "mean_final_distance_mm": self.mean_final_distance_mm,
        }


def summarize_navigation(traces) -> NavigationSummary:
    """Success rate, steps-to-success over successes, and final distances."""
    traces = list(traces)
    if not traces:
        raise InputError("no traces to summarize")
    successes = [t for t in traces if t.outcome == "SUCCESS"]
    mean_steps = (
        float(np.mean([t.success_step for t in successes])) if successes else None
    )
    return NavigationSummary(
        n_episodes=len(traces),
        n_success=len(successes),
        success_rate=len(successes) / len(traces),
        mean_steps_to_success=mean_steps,
        mean_final_distance_mm=float(np.mean([t.final_distance_mm for t in traces])),
    )
