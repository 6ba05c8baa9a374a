"""Evaluation of uncertainty-scored pose estimates against ground truth.

The pose error is the maximum distance a model point travels between the
estimated and the true pose (MDD). An estimate whose uncertainty passes
the filter threshold u_T counts as a true positive when its MDD stays
within the error threshold e_t, otherwise as a false positive; a ground
truth object that is visible enough (visible_fraction >= theta_v) and got
no true positive counts as a false negative.

Per image n the score terms are

    AP_n  = TP_u / (TP_u + FP_u)
    AR_n  = TP_u / (TP_u + FN)
    ARU_n = TP_u / TP          (TP of the unfiltered estimate set)

and the dataset scores are their means over images. Terms with a zero
denominator are skipped, except that an image with neither filtered
estimates nor ground truth contributes a perfect AP term.

Association of estimates to ground truth is per class: when every
estimate and ground truth of a class carries an instance id the pairing
uses the ids, otherwise it is greedy over the smallest MDD (globally
smallest first, one-to-one, ties toward the lowest estimate index then
the lowest ground-truth index in list order). Pairs are formed without
regard to e_t; a pair beyond e_t yields an FP and, if visible enough,
an FN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import ModelPoints, Pose

DEFAULT_THETA_V = 0.85
DEFAULT_AP_TARGET = 0.99
E_T_RANGE = (0.0, 0.03)
E_T_POINTS = 61

CSV_HEADER = "e_t_m,u_T,AP,AR,ARU,AR_star"


def default_grid() -> np.ndarray:
    """Error thresholds swept by the evaluation, 0.5 mm steps up to 3 cm."""
    return np.linspace(E_T_RANGE[0], E_T_RANGE[1], E_T_POINTS)


@dataclass(frozen=True)
class GroundTruthObject:
    pose: Pose
    class_id: str
    visible_fraction: float
    instance_id: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.visible_fraction <= 1.0:
            raise ValueError("visible_fraction must be in [0, 1]")


@dataclass(frozen=True)
class ScoredEstimate:
    pose: Pose
    class_id: str
    uncertainty: float
    instance_id: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.uncertainty <= 1.0:
            raise ValueError("uncertainty must be in [0, 1]")


@dataclass(frozen=True)
class EvalImage:
    estimates: tuple[ScoredEstimate, ...]
    ground_truth: tuple[GroundTruthObject, ...]


@dataclass(frozen=True)
class ImageCounts:
    tp_u: int
    fp_u: int
    fn: int
    tp_unfiltered: int
    n_gt: int


@dataclass(frozen=True)
class DatasetScores:
    ap: float
    ar: float
    aru: float


@dataclass(frozen=True)
class EvalCurves:
    e_t: np.ndarray
    u_t: np.ndarray
    ap: np.ndarray
    ar: np.ndarray
    aru: np.ndarray
    ar_star: np.ndarray
    feasible: np.ndarray
    auc_ar: float
    spearman_rho: Optional[float]
    counts: dict


def mdd(p_est: Pose, p_gt: Pose, model: ModelPoints) -> float:
    """Largest Euclidean displacement of any model point between two poses."""
    pts = np.asarray(model, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError("model points must be a non-empty (N, 3) array")
    delta = p_est.apply(pts) - p_gt.apply(pts)
    return float(np.linalg.norm(delta, axis=1).max())


def _associate(
    estimates: Sequence[ScoredEstimate],
    gts: Sequence[GroundTruthObject],
    models: Mapping[str, ModelPoints],
) -> list[tuple[int, int, float]]:
    """One-to-one (estimate, ground truth, MDD) pairs, per the class rules."""
    pairs: list[tuple[int, int, float]] = []
    classes = sorted({e.class_id for e in estimates} & {g.class_id for g in gts})
    for class_id in classes:
        rows = [i for i, e in enumerate(estimates) if e.class_id == class_id]
        cols = [j for j, g in enumerate(gts) if g.class_id == class_id]
        if class_id not in models:
            raise ValueError(f"no model points for class {class_id!r}")
        pts = models[class_id]
        if all(estimates[i].instance_id is not None for i in rows) and all(
            gts[j].instance_id is not None for j in cols
        ):
            by_id = {gts[j].instance_id: j for j in cols}
            for i in rows:
                j = by_id.get(estimates[i].instance_id)
                if j is not None:
                    pairs.append((i, j, mdd(estimates[i].pose, gts[j].pose, pts)))
            continue
        dist = np.array(
            [[mdd(estimates[i].pose, gts[j].pose, pts) for j in cols] for i in rows]
        )
        for _ in range(min(len(rows), len(cols))):
            best = dist.min()
            if not np.isfinite(best):
                break
            r, c = min(map(tuple, np.argwhere(dist == best)))
            pairs.append((rows[r], cols[c], float(dist[r, c])))
            dist[r, :] = np.inf
            dist[:, c] = np.inf
    return pairs


def _count_subset(estimates, gts, models, e_t, theta_v):
    pairs = _associate(estimates, gts, models)
    tp = sum(1 for _, _, d in pairs if d <= e_t)
    fp = len(estimates) - tp
    eligible = {j for j, g in enumerate(gts) if g.visible_fraction >= theta_v}
    hit = {j for _, j, d in pairs if d <= e_t}
    fn = len(eligible - hit)
    return tp, fp, fn


def classify_image(
    estimates: Sequence[ScoredEstimate],
    gts: Sequence[GroundTruthObject],
    models: Mapping[str, ModelPoints],
    e_t: float,
    theta_v: float = DEFAULT_THETA_V,
    u_t: float = 1.0,
) -> ImageCounts:
    """TP/FP/FN counts of one image at a filter threshold u_t.

    `tp_unfiltered` is the TP count of the full estimate set, the ARU
    denominator.
    """
    if e_t < 0:
        raise ValueError("e_t must be non-negative")
    for name, val in (("theta_v", theta_v), ("u_t", u_t)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")
    kept = [e for e in estimates if e.uncertainty <= u_t]
    tp_u, fp_u, fn = _count_subset(kept, gts, models, e_t, theta_v)
    tp, _, _ = _count_subset(estimates, gts, models, e_t, theta_v)
    return ImageCounts(tp_u, fp_u, fn, tp, len(gts))


def dataset_scores(counts: Sequence[ImageCounts]) -> DatasetScores:
    """Mean per-image scores; NaN when no image contributes to a mean."""
    if not counts:
        raise ValueError("need counts for at least one image")
    ap_terms, ar_terms, aru_terms = [], [], []
    for c in counts:
        claimed = c.tp_u + c.fp_u
        if claimed > 0:
            ap_terms.append(c.tp_u / claimed)
        elif c.n_gt == 0:
            ap_terms.append(1.0)
        wanted = c.tp_u + c.fn
        if wanted > 0:
            ar_terms.append(c.tp_u / wanted)
        if c.tp_unfiltered > 0:
            aru_terms.append(c.tp_u / c.tp_unfiltered)

    def _mean(terms):
        return sum(terms) / len(terms) if terms else math.nan

    return DatasetScores(_mean(ap_terms), _mean(ar_terms), _mean(aru_terms))


class _ImageTable:
    """Precomputed per-image association results for every filter level.

    The filtered subset only changes at the image's own uncertainty values,
    so each distinct subset is associated once. Level k keeps the sorted
    MDDs of its pairs (and of the pairs whose ground truth is visible
    enough), from which TP/FP/FN at any e_t follow by binary search.
    """

    __slots__ = ("levels", "sizes", "mdds", "elig_mdds", "n_eligible", "n_gt")

    def __init__(self, image: EvalImage, models, theta_v: float):
        ests = image.estimates
        gts = image.ground_truth
        self.levels = np.unique([e.uncertainty for e in ests])
        self.n_gt = len(gts)
        self.n_eligible = sum(1 for g in gts if g.visible_fraction >= theta_v)
        self.sizes = np.zeros(len(self.levels) + 1, dtype=np.int64)
        self.mdds = []
        self.elig_mdds = []
        for k in range(len(self.levels) + 1):
            if k == 0:
                subset = []
            else:
                subset = [e for e in ests if e.uncertainty <= self.levels[k - 1]]
            pairs = _associate(subset, gts, models)
            self.sizes[k] = len(subset)
            self.mdds.append(np.sort([d for _, _, d in pairs]))
            self.elig_mdds.append(
                np.sort(
                    [d for _, j, d in pairs if gts[j].visible_fraction >= theta_v]
                )
            )

    def level(self, u_t: float) -> int:
        return int(np.searchsorted(self.levels, u_t, side="right"))

    def counts(self, e_t: float, u_t: float) -> ImageCounts:
        k = self.level(u_t)
        top = len(self.levels)
        tp_u = int(np.searchsorted(self.mdds[k], e_t, side="right"))
        fp_u = int(self.sizes[k]) - tp_u
        fn = self.n_eligible - int(np.searchsorted(self.elig_mdds[k], e_t, side="right"))
        tp = int(np.searchsorted(self.mdds[top], e_t, side="right"))
        return ImageCounts(tp_u, fp_u, fn, tp, self.n_gt)

    def ap_contrib(self, e_t: float, candidates: np.ndarray):
        """AP term of this image for every candidate u_T at once.

        Returns (numerator, counted) vectors over candidates; `counted` is
        False where the image is skipped.
        """
        k = np.searchsorted(self.levels, candidates, side="right")
        tp_by_level = np.array(
            [np.searchsorted(m, e_t, side="right") for m in self.mdds], dtype=np.float64
        )
        tp = tp_by_level[k]
        size = self.sizes[k].astype(np.float64)
        counted = size > 0
        num = np.zeros(len(candidates))
        num[counted] = tp[counted] / size[counted]
        if self.n_gt == 0:
            num[~counted] = 1.0
            counted = np.ones(len(candidates), dtype=bool)
        return num, counted


def _build_tables(images, models, theta_v):
    if not images:
        raise ValueError("need at least one image")
    return [_ImageTable(img, models, theta_v) for img in images]


def _candidate_thresholds(tables) -> np.ndarray:
    levels = [t.levels for t in tables] + [np.zeros(1)]
    return np.unique(np.concatenate(levels))


def _ap_over_candidates(tables, e_t, candidates):
    num = np.zeros(len(candidates))
    cnt = np.zeros(len(candidates))
    for table in tables:
        n, counted = table.ap_contrib(e_t, candidates)
        num += n
        cnt += counted
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, num / np.maximum(cnt, 1), math.nan)


def _pick_threshold(tables, e_t, candidates, ap_target):
    ap = _ap_over_candidates(tables, e_t, candidates)
    ok = np.nonzero(ap >= ap_target)[0]
    if len(ok) == 0:
        return None
    return float(candidates[ok[-1]])


def threshold_for_target(
    images: Sequence[EvalImage],
    models: Mapping[str, ModelPoints],
    e_t: float,
    ap_target: float = DEFAULT_AP_TARGET,
    theta_v: float = DEFAULT_THETA_V,
) -> Optional[float]:
    """Largest u_T with dataset AP(e_t, u_T) >= ap_target, or None.

    Candidates are 0 and every observed uncertainty; no threshold between
    two observed values changes the filtered sets, so the scan is exact.
    """
    if not 0.0 < ap_target <= 1.0:
        raise ValueError("ap_target must be in (0, 1]")
    tables = _build_tables(images, models, theta_v)
    return _pick_threshold(tables, e_t, _candidate_thresholds(tables), ap_target)


def _scores_at(tables, e_t, u_t) -> DatasetScores:
    return dataset_scores([t.counts(e_t, u_t) for t in tables])


def sweep_curves(
    images: Sequence[EvalImage],
    models: Mapping[str, ModelPoints],
    e_grid=None,
    ap_target: float = DEFAULT_AP_TARGET,
    theta_v: float = DEFAULT_THETA_V,
) -> EvalCurves:
    """Threshold choice and scores for every error threshold on the grid.

    Where no u_T reaches ap_target the grid point is marked infeasible,
    u_T is recorded as NaN and the scores are those of the most
    conservative filter u_T = 0. AR* is the recall of the unfiltered set.
    """
    grid = default_grid() if e_grid is None else np.asarray(e_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("e_t grid must be ascending with at least 2 points")
    if not 0.0 < ap_target <= 1.0:
        raise ValueError("ap_target must be in (0, 1]")
    tables = _build_tables(images, models, theta_v)
    candidates = _candidate_thresholds(tables)

    u_t = np.full(len(grid), math.nan)
    feasible = np.zeros(len(grid), dtype=bool)
    ap = np.zeros(len(grid))
    ar = np.zeros(len(grid))
    aru = np.zeros(len(grid))
    ar_star = np.zeros(len(grid))
    for i, e_t in enumerate(grid):
        chosen = _pick_threshold(tables, float(e_t), candidates, ap_target)
        feasible[i] = chosen is not None
        operating = chosen if chosen is not None else 0.0
        if chosen is not None:
            u_t[i] = chosen
        scores = _scores_at(tables, float(e_t), operating)
        ap[i], ar[i], aru[i] = scores.ap, scores.ar, scores.aru
        ar_star[i] = _scores_at(tables, float(e_t), 1.0).ar

    pairs, n_unmatched = correlation_pairs(images, models)
    rho = spearman(pairs) if len(pairs) >= 2 else None
    final = [t.counts(float(grid[-1]), u_t[-1] if feasible[-1] else 0.0) for t in tables]
    counts = {
        "images": len(images),
        "estimates": int(sum(len(img.estimates) for img in images)),
        "matched_estimates": len(pairs),
        "unmatched_estimates": n_unmatched,
        "tp": int(sum(c.tp_u for c in final)),
        "fp": int(sum(c.fp_u for c in final)),
        "fn": int(sum(c.fn for c in final)),
        "counted_at_e_t_m": float(grid[-1]),
    }
    return EvalCurves(
        e_t=grid,
        u_t=u_t,
        ap=ap,
        ar=ar,
        aru=aru,
        ar_star=ar_star,
        feasible=feasible,
        auc_ar=auc(grid, ar),
        spearman_rho=rho,
        counts=counts,
    )


def auc(e_t, values) -> float:
    """Trapezoidal area under a curve, as a percentage of the e_t range."""
    x = np.asarray(e_t, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2 or x.shape != y.shape:
        raise ValueError("need two same-length 1D arrays with >= 2 points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("e_t values must be strictly ascending")
    area = float(np.sum((y[1:] + y[:-1]) / 2.0 * np.diff(x)))
    return 100.0 * area / float(x[-1] - x[0])


def _ranks(values: np.ndarray) -> np.ndarray:
    # ties get the average of the positions they span
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(pairs: Sequence[tuple[float, float]]) -> Optional[float]:
    """Rank correlation of (uncertainty, error) pairs; None when undefined.

    Pearson correlation of the two rank vectors, with tied values sharing
    their average rank. A constant axis has no ranking to correlate, which
    returns None rather than a NaN.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs")
    u = np.array([p[0] for p in pairs], dtype=np.float64)
    e = np.array([p[1] for p in pairs], dtype=np.float64)
    if np.all(u == u[0]) or np.all(e == e[0]):
        return None
    ru = _ranks(u) - (len(u) + 1) / 2.0
    re = _ranks(e) - (len(e) + 1) / 2.0
    return float((ru @ re) / math.sqrt((ru @ ru) * (re @ re)))


def correlation_pairs(
    images: Sequence[EvalImage], models: Mapping[str, ModelPoints]
) -> tuple[list[tuple[float, float]], int]:
    """(uncertainty, MDD) of every estimate associated to a ground truth.

    Estimates that match no ground truth have no defined error and are
    excluded; the second return value counts them.
    """
    pairs: list[tuple[float, float]] = []
    unmatched = 0
    for img in images:
        assoc = _associate(img.estimates, img.ground_truth, models)
        for i, _, d in assoc:
            pairs.append((img.estimates[i].uncertainty, d))
        unmatched += len(img.estimates) - len(assoc)
    return pairs, unmatched


def write_curves_csv(path, curves: EvalCurves) -> None:
    lines = [CSV_HEADER]
    for i in range(len(curves.e_t)):
        row = (
            curves.e_t[i],
            curves.u_t[i],
            curves.ap[i],
            curves.ar[i],
            curves.aru[i],
            curves.ar_star[i],
        )
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _json_safe(x: float) -> Optional[float]:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def curves_summary(curves: EvalCurves) -> dict:
    """JSON-ready summary: AUC, correlation, counts, infeasible thresholds."""
    return {
        "auc_ar": _json_safe(curves.auc_ar),
        "spearman_rho": _json_safe(curves.spearman_rho),
        "counts": curves.counts,
        "infeasible_e_t_m": [
            float(curves.e_t[i]) for i in range(len(curves.e_t)) if not curves.feasible[i]
        ],
        "ap_target_met_everywhere": bool(curves.feasible.all()),
    }


def write_summary_json(path, curves: EvalCurves) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(curves_summary(curves), fh, indent=2, sort_keys=True)
        fh.write("\n")
