"""Study-level decisions from per-slice probabilities: count-threshold voting,
F1-maximising threshold search, and the confusion-matrix metric suite."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateValidationSet, LengthMismatch


@dataclass
class ProbabilitySeries:
    study_id: str
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64).reshape(-1)
        if self.rho.size < 1:
            raise ValueError(f"{self.study_id}: empty probability series")
        if np.any((self.rho < 0) | (self.rho > 1)) or np.any(np.isnan(self.rho)):
            raise ValueError(f"{self.study_id}: probabilities must lie in [0, 1]")

    def __len__(self):
        return self.rho.size


@dataclass(frozen=True)
class VotingParams:
    delta: float
    mu: int

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"slice threshold must lie in (0, 1), got {self.delta}")
        if int(self.mu) != self.mu or self.mu < 1:
            raise ValueError(f"study count threshold must be a positive integer, got {self.mu}")


@dataclass(frozen=True)
class Metrics:
    """Confusion counts and derived ratios; a ratio with a zero denominator is None."""

    tp: int
    fp: int
    fn: int
    tn: int

    @staticmethod
    def _ratio(num: int, den: int) -> Optional[float]:
        return num / den if den else None

    @property
    def sensitivity(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self):
        return self._ratio(self.tn, self.tn + self.fp)

    @property
    def ppv(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def npv(self):
        return self._ratio(self.tn, self.tn + self.fn)

    @property
    def f1(self):
        return f1_score(self.ppv, self.sensitivity)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "sensitivity": self.sensitivity, "specificity": self.specificity,
                "ppv": self.ppv, "npv": self.npv, "f1": self.f1}


def f1_score(ppv: Optional[float], sensitivity: Optional[float]) -> Optional[float]:
    """Harmonic mean of precision and recall; None if either is undefined."""
    if ppv is None or sensitivity is None:
        return None
    if ppv + sensitivity == 0:
        return 0.0
    return 2.0 * ppv * sensitivity / (ppv + sensitivity)


def vote(series, params: VotingParams) -> bool:
    """Positive iff strictly more-than-``delta`` slices number at least ``mu``."""
    rho = series.rho if isinstance(series, ProbabilitySeries) else np.asarray(series)
    return int(np.count_nonzero(rho > params.delta)) >= params.mu


def compute_metrics(predictions: Sequence[bool], labels: Sequence[bool]) -> Metrics:
    pred = np.asarray(predictions, dtype=bool).reshape(-1)
    true = np.asarray(labels, dtype=bool).reshape(-1)
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {true.size} labels")
    if pred.size < 1:
        raise LengthMismatch("no predictions")
    return Metrics(tp=int(np.count_nonzero(pred & true)), fp=int(np.count_nonzero(pred & ~true)),
                   fn=int(np.count_nonzero(~pred & true)), tn=int(np.count_nonzero(~pred & ~true)))


def candidate_deltas(values: np.ndarray) -> np.ndarray:
    """Observed probabilities, the midpoints between neighbours, and one point
    below the smallest; restricted to the open interval (0, 1)."""
    u = np.unique(np.asarray(values, dtype=np.float64))
    cands = [u, (u[:-1] + u[1:]) / 2.0]
    if u[0] > 0:
        cands.append(u[:1] / 2.0)
    c = np.unique(np.concatenate(cands))
    return c[(c > 0.0) & (c < 1.0)]


def _f1_counts(tp, fp, fn):
    den = 2 * tp + fp + fn
    return np.where(den > 0, 2 * tp / np.maximum(den, 1), 0.0)


def grid_f1(series: Sequence[np.ndarray], labels: np.ndarray, deltas: np.ndarray,
            max_mu: int) -> np.ndarray:
    """F1 for every (mu, delta) pair; shape (max_mu, len(deltas))."""
    labels = np.asarray(labels, dtype=bool)
    counts = np.stack([(np.asarray(r)[:, None] > deltas[None, :]).sum(axis=0) for r in series])
    mus = np.arange(1, max_mu + 1)
    pred = counts[None, :, :] >= mus[:, None, None]  # (mu, study, delta)
    pos = labels[None, :, None]
    tp = (pred & pos).sum(axis=1)
    fp = (pred & ~pos).sum(axis=1)
    fn = (~pred & pos).sum(axis=1)
    return _f1_counts(tp, fp, fn)


def tune_thresholds(val: Iterable[tuple]) -> tuple[VotingParams, float]:
    """Exhaustive search of (delta, mu) maximising validation F1.

    Ties go to the largest delta, then the largest mu.
    """
    val = list(val)
    series = [s.rho if isinstance(s, ProbabilitySeries) else np.asarray(s, float) for s, _ in val]
    labels = np.array([bool(y) for _, y in val])
    if not labels.any() or labels.all():
        raise DegenerateValidationSet("need at least one positive and one negative study")
    deltas = candidate_deltas(np.concatenate(series))
    if deltas.size == 0:
        raise DegenerateValidationSet("no threshold candidate inside (0, 1)")
    max_mu = max(len(r) for r in series)
    f1 = grid_f1(series, labels, deltas, max_mu)
    best = f1.max()
    mu_idx, d_idx = np.nonzero(f1 == best)
    # lexicographic: largest delta first, then largest mu
    order = np.lexsort((mu_idx, d_idx))
    i = order[-1]
    params = VotingParams(float(deltas[d_idx[i]]), int(mu_idx[i] + 1))
    achieved = compute_metrics([vote(r, params) for r in series], labels).f1
    return params, float(achieved or 0.0)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["params", "metrics", "excluded", "exclusion_rate", "per_study"],
    "properties": {
        "params": {
            "type": "object",
            "required": ["delta", "mu"],
            "properties": {"delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                           "mu": {"type": "integer", "minimum": 1}},
        },
        "metrics": {
            "type": "object",
            "properties": {
                **{k: {"type": "integer", "minimum": 0} for k in ("tp", "fp", "fn", "tn")},
                **{k: {"type": ["number", "null"], "minimum": 0, "maximum": 1}
                   for k in ("sensitivity", "specificity", "ppv", "npv", "f1")},
            },
        },
        "excluded": {"type": "array", "items": {"type": "string"}},
        "exclusion_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "per_study": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["study_id", "label", "prediction"],
                "properties": {"study_id": {"type": "string"}, "label": {"type": "boolean"},
                               "prediction": {"type": "boolean"},
                               "positive_slices": {"type": "integer", "minimum": 0}},
            },
        },
    },
}


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


def evaluate_studies(outputs: Mapping[str, Optional[ProbabilitySeries]],
                     labels: Mapping[str, bool], params: VotingParams) -> dict:
    """Vote every study; studies mapped to None were excluded upstream (empty
    organ mask) and are reported separately instead of being scored."""
    excluded = sorted(sid for sid, s in outputs.items() if s is None)
    scored = sorted(sid for sid, s in outputs.items() if s is not None)
    per_study = []
    for sid in scored:
        s = outputs[sid]
        per_study.append({"study_id": sid, "label": bool(labels[sid]),
                          "prediction": vote(s, params),
                          "positive_slices": int(np.count_nonzero(s.rho > params.delta))})
    if per_study:
        metrics = compute_metrics([r["prediction"] for r in per_study],
                                  [r["label"] for r in per_study]).to_dict()
    else:
        metrics = {}
    total = len(outputs)
    return {
        "params": {"delta": params.delta, "mu": params.mu},
        "metrics": metrics,
        "excluded": excluded,
        "exclusion_rate": len(excluded) / total if total else 0.0,
        "per_study": per_study,
    }


def write_predictions_csv(path, series: Iterable[ProbabilitySeries]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["study_id", "slice_index", "probability"])
        for s in series:
            for i, p in enumerate(s.rho):
                w.writerow([s.study_id, i, repr(float(p))])


def read_predictions_csv(path) -> list[ProbabilitySeries]:
    rows: dict[str, dict[int, float]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["study_id"], {})[int(row["slice_index"])] = float(row["probability"])
    out = []
    for sid, d in rows.items():
        idx = sorted(d)
        if idx != list(range(len(idx))):
            raise ValueError(f"{sid}: slice indices are not contiguous from 0")
        out.append(ProbabilitySeries(sid, np.array([d[i] for i in idx])))
    return out


def format_ratio(x: Optional[float]) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.3f}"
