"""Detection and uncertainty quality metrics at IoU 0.5.

mAP uses all-point interpolation. MUE is the minimum over entropy thresholds
of the balanced TP/FP misclassification rate. PDQ follows the probabilistic
detection quality definition: per pair, the geometric mean of a pixel-grid
spatial quality and the label probability of the true class, with Hungarian
assignment per image.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import log_ndtr

from .errors import ValidationError
from .model import Box, foreground_mask, iou_matrix

IOU_THRESHOLD = 0.5
_EPS = 1e-14


@dataclass(frozen=True)
class GroundTruthObject:
    image_id: int
    box: Box
    category_index: int

    def __post_init__(self):
        if not isinstance(self.box, Box):
            object.__setattr__(self, "box", Box.from_array(self.box))
        if self.category_index < 0:
            raise ValidationError("category_index must be non-negative")


@dataclass(frozen=True)
class MatchRecord:
    detection: int
    matched: bool
    matched_gt: Optional[int]
    iou_at_match: float
    category: int
    score: float


@dataclass
class EvalReport:
    categories: List[str]
    ap: Dict[int, float] = field(default_factory=dict)
    gmue: Dict[int, float] = field(default_factory=dict)
    cmue: Dict[int, float] = field(default_factory=dict)
    gmue_threshold: Dict[int, float] = field(default_factory=dict)
    cmue_threshold: Dict[int, float] = field(default_factory=dict)
    pdq_components: Dict[str, float] = field(default_factory=dict)
    mAP: Optional[float] = None
    mGMUE: Optional[float] = None
    mCMUE: Optional[float] = None
    PDQ: Optional[float] = None
    notices: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        def per_cat(d):
            return {self.categories[k]: _finite_or_str(v) for k, v in sorted(d.items())}

        out = {}
        if self.mAP is not None:
            out["mAP"] = self.mAP
            out["AP"] = per_cat(self.ap)
        if self.mGMUE is not None or self.mCMUE is not None:
            out["mGMUE"] = self.mGMUE
            out["mCMUE"] = self.mCMUE
            out["GMUE"] = per_cat(self.gmue)
            out["CMUE"] = per_cat(self.cmue)
            out["GMUE_threshold"] = per_cat(self.gmue_threshold)
            out["CMUE_threshold"] = per_cat(self.cmue_threshold)
        if self.PDQ is not None:
            out["PDQ"] = self.PDQ
            out["PDQ_label"] = "PDQ (per cited definition)"
            out["PDQ_components"] = dict(self.pdq_components)
        out["notices"] = list(self.notices)
        return out


def _finite_or_str(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "-inf"
    return v


# -- detection adapter --------------------------------------------------------

@dataclass(frozen=True)
class _Det:
    image_id: int
    mean: np.ndarray
    cov: np.ndarray
    probs: np.ndarray
    score: float
    label: int
    gaussian_entropy: float
    categorical_entropy: float


def _adapt(dets, background_index=None) -> List[_Det]:
    out = []
    for d in dets:
        probs = d.category.probs
        mask = foreground_mask(probs.size, background_index)
        fg = np.where(mask, probs, -np.inf)
        out.append(_Det(int(d.image_id if d.image_id is not None else 0), d.box.mean, d.box.cov, probs,
                        float(d.score), int(np.argmax(fg)), float(d.gaussian_entropy),
                        float(d.categorical_entropy)))
    return out


def _rank_key(d: _Det, idx: int):
    # score first; the rest makes the ranking independent of input order
    return (-d.score, d.image_id, tuple(d.mean.tolist()), tuple(d.probs.tolist()), idx)


# -- matching -----------------------------------------------------------------

def match_detections(dets, gts: Sequence[GroundTruthObject], iou_thresh: float = IOU_THRESHOLD,
                     background_index: Optional[int] = None) -> List[MatchRecord]:
    """Greedy score-ordered matching, per image and category.

    Each detection, in descending score, takes the highest-IoU still-unmatched
    ground truth of its category with IoU >= ``iou_thresh``. Records are
    returned in input order of ``dets``.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValidationError("iou_thresh must lie in (0, 1)")
    ds = dets if dets and isinstance(dets[0], _Det) else _adapt(dets, background_index)
    gt_by_key = defaultdict(list)
    for j, g in enumerate(gts):
        gt_by_key[(g.image_id, g.category_index)].append(j)
    order = sorted(range(len(ds)), key=lambda i: _rank_key(ds[i], i))
    taken = set()
    records = [None] * len(ds)
    gt_boxes = {}
    for i in order:
        d = ds[i]
        cands = [j for j in gt_by_key.get((d.image_id, d.label), []) if j not in taken]
        best, best_iou = None, 0.0
        if cands:
            boxes = np.stack([gt_boxes.setdefault(j, gts[j].box.as_array()) for j in cands])
            ious = iou_matrix(d.mean[None], boxes)[0]
            k = int(np.argmax(ious))
            if ious[k] >= iou_thresh:
                best, best_iou = cands[k], float(ious[k])
        if best is not None:
            taken.add(best)
        records[i] = MatchRecord(i, best is not None, best, best_iou, d.label, d.score)
    return records


# -- average precision --------------------------------------------------------

def average_precision(tp_flags: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP (percent) from rank-ordered TP flags."""
    if num_gt < 1:
        raise ValidationError("AP undefined without ground truth")
    tp = np.asarray(tp_flags, dtype=float)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, tp.size + 1)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(100.0 * np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


# -- minimum uncertainty error ------------------------------------------------

def uncertainty_error(entropies_tp, entropies_fp, threshold: float) -> float:
    tp = np.asarray(entropies_tp, dtype=float)
    fp = np.asarray(entropies_fp, dtype=float)
    return 0.5 * float(np.mean(tp > threshold)) + 0.5 * float(np.mean(fp <= threshold))


def minimum_uncertainty_error(entropies_tp, entropies_fp) -> Tuple[float, float]:
    """Return (MUE percent, minimizing threshold).

    Candidate thresholds are every observed entropy plus ±inf; the lowest
    minimizing threshold is returned.
    """
    tp = np.sort(np.asarray(entropies_tp, dtype=float))
    fp = np.sort(np.asarray(entropies_fp, dtype=float))
    if tp.size == 0 or fp.size == 0:
        raise ValidationError("MUE needs at least one true positive and one false positive")
    cands = np.concatenate([[-np.inf], np.unique(np.concatenate([tp, fp])), [np.inf]])
    # sorted arrays make every candidate O(log n)
    tp_above = tp.size - np.searchsorted(tp, cands, side="right")
    fp_below = np.searchsorted(fp, cands, side="right")
    ue = 0.5 * tp_above / tp.size + 0.5 * fp_below / fp.size
    k = int(np.argmin(ue))
    return 100.0 * float(ue[k]), float(cands[k])


# -- PDQ ----------------------------------------------------------------------

def _pixel_axis(n: int) -> np.ndarray:
    return np.arange(n) + 0.5


def _inside_logprob_1d(centers, lo_mu, lo_sd, hi_mu, hi_sd):
    """log P(lo <= c) and log P(hi >= c) per pixel center for independent corners."""
    def log_cdf(x, mu, sd):
        if sd <= 0.0:
            return np.where(x >= mu, 0.0, -np.inf)
        return log_ndtr((x - mu) / sd)

    def log_sf(x, mu, sd):
        if sd <= 0.0:
            return np.where(x <= mu, 0.0, -np.inf)
        return log_ndtr((mu - x) / sd)

    return log_cdf(centers, lo_mu, lo_sd) + log_sf(centers, hi_mu, hi_sd)


def spatial_quality(mean, cov, gt_box: Box, image_size: Tuple[int, int]) -> float:
    """exp(-(foreground loss + background loss)) on the integer pixel grid.

    A pixel belongs to a box when its center lies inside it. Each corner
    coordinate is treated as an independent normal with the marginal variance
    from ``cov`` (zero variance means a hard edge). Losses are normalized by
    the number of ground-truth pixels.
    """
    W, H = image_size
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.clip(np.diag(np.asarray(cov, dtype=float)), 0.0, None))
    xs, ys = _pixel_axis(W), _pixel_axis(H)
    lpx = _inside_logprob_1d(xs, mean[0], sd[0], mean[2], sd[2])
    lpy = _inside_logprob_1d(ys, mean[1], sd[1], mean[3], sd[3])
    gx = (xs >= gt_box.x1) & (xs <= gt_box.x2)
    gy = (ys >= gt_box.y1) & (ys <= gt_box.y2)
    n_gt = int(gx.sum()) * int(gy.sum())
    if n_gt == 0:
        return 0.0
    floor = math.log(_EPS)
    # pixels outside the GT with P <= eps contribute nothing: crop to the support
    cx = np.flatnonzero(gx | (lpx > floor))
    cy = np.flatnonzero(gy | (lpy > floor))
    lpx, gx = lpx[cx[0]:cx[-1] + 1], gx[cx[0]:cx[-1] + 1]
    lpy, gy = lpy[cy[0]:cy[-1] + 1], gy[cy[0]:cy[-1] + 1]
    lp = np.maximum(lpy[:, None] + lpx[None, :], floor)
    inside = gy[:, None] & gx[None, :]
    fg_loss = -float(np.sum(lp[inside])) / n_gt
    p_out = np.exp(lp[~inside])
    p_out = p_out[p_out > _EPS]
    bg_loss = -float(np.sum(np.log(np.maximum(1.0 - p_out, _EPS)))) / n_gt
    return math.exp(-(fg_loss + bg_loss))


def pairwise_quality(spatial: float, label: float) -> float:
    return math.sqrt(max(spatial, 0.0) * max(label, 0.0))


def pdq_score(dets, gts: Sequence[GroundTruthObject], image_sizes, details: Optional[dict] = None) -> float:
    """Dataset PDQ in percent.

    ``image_sizes`` maps image_id to (width, height), or is a single pair for
    all images. Assigned pairs with zero quality count as one FP and one FN.
    """
    ds = dets if dets and isinstance(dets[0], _Det) else _adapt(dets)
    by_img_d, by_img_g = defaultdict(list), defaultdict(list)
    for d in ds:
        by_img_d[d.image_id].append(d)
    for g in gts:
        by_img_g[g.image_id].append(g)
    total_q, n_tp, n_fp, n_fn = 0.0, 0, 0, 0
    spatial_sum, label_sum = 0.0, 0.0
    for img in sorted(set(by_img_d) | set(by_img_g)):
        dl, gl = by_img_d.get(img, []), by_img_g.get(img, [])
        if not dl or not gl:
            n_fp += len(dl)
            n_fn += len(gl)
            continue
        size = image_sizes[img] if isinstance(image_sizes, dict) else image_sizes
        q = np.zeros((len(dl), len(gl)))
        sq = np.zeros_like(q)
        lq = np.zeros_like(q)
        for a, d in enumerate(dl):
            for b, g in enumerate(gl):
                lab = float(d.probs[g.category_index]) if g.category_index < d.probs.size else 0.0
                if lab <= 0.0:
                    continue
                s = spatial_quality(d.mean, d.cov, g.box, size)
                sq[a, b], lq[a, b] = s, lab
                q[a, b] = pairwise_quality(s, lab)
        rows, cols = linear_sum_assignment(q, maximize=True)
        good = q[rows, cols] > 0.0
        total_q += float(q[rows, cols][good].sum())
        spatial_sum += float(sq[rows, cols][good].sum())
        label_sum += float(lq[rows, cols][good].sum())
        tp = int(good.sum())
        n_tp += tp
        n_fp += len(dl) - tp
        n_fn += len(gl) - tp
    denom = n_tp + n_fp + n_fn
    score = 0.0 if denom == 0 else 100.0 * total_q / denom
    if details is not None:
        details.update({
            "TP": n_tp, "FP": n_fp, "FN": n_fn,
            "avg_pPDQ": total_q / n_tp if n_tp else 0.0,
            "avg_spatial": spatial_sum / n_tp if n_tp else 0.0,
            "avg_label": label_sum / n_tp if n_tp else 0.0,
        })
    return score


# -- report -------------------------------------------------------------------

def evaluate(dets, gts: Sequence[GroundTruthObject], categories: Sequence[str],
             metrics: Iterable[str] = ("map", "mue", "pdq"), image_sizes=None,
             background_index: Optional[int] = None, iou_thresh: float = IOU_THRESHOLD) -> EvalReport:
    metrics = set(metrics)
    unknown = metrics - {"map", "mue", "pdq"}
    if unknown:
        raise ValidationError(f"unknown metrics {sorted(unknown)}")
    report = EvalReport(list(categories))
    ds = _adapt(dets, background_index)
    K = len(categories)
    gt_count = np.zeros(K, dtype=int)
    for g in gts:
        if g.category_index >= K:
            raise ValidationError(f"ground truth category {g.category_index} out of range")
        gt_count[g.category_index] += 1

    if metrics & {"map", "mue"}:
        recs = match_detections(ds, gts, iou_thresh)
        per_cat = defaultdict(list)
        for r in recs:
            per_cat[r.category].append(r)
        for k in range(K):
            if gt_count[k] == 0:
                if per_cat.get(k):
                    report.notices.append(
                        f"category {categories[k]!r}: {len(per_cat[k])} detections but no ground truth; excluded")
                continue
            rs = sorted(per_cat.get(k, []), key=lambda r: _rank_key(ds[r.detection], r.detection))
            if "map" in metrics:
                report.ap[k] = average_precision([r.matched for r in rs], int(gt_count[k]))
            if "mue" in metrics:
                tps = [ds[r.detection] for r in rs if r.matched]
                fps = [ds[r.detection] for r in rs if not r.matched]
                if not tps or not fps:
                    report.notices.append(
                        f"category {categories[k]!r}: MUE undefined ({len(tps)} TP, {len(fps)} FP); excluded")
                    continue
                report.gmue[k], report.gmue_threshold[k] = minimum_uncertainty_error(
                    [d.gaussian_entropy for d in tps], [d.gaussian_entropy for d in fps])
                report.cmue[k], report.cmue_threshold[k] = minimum_uncertainty_error(
                    [d.categorical_entropy for d in tps], [d.categorical_entropy for d in fps])
        if "map" in metrics:
            report.mAP = float(np.mean(list(report.ap.values()))) if report.ap else 0.0
        if "mue" in metrics:
            report.mGMUE = float(np.mean(list(report.gmue.values()))) if report.gmue else None
            report.mCMUE = float(np.mean(list(report.cmue.values()))) if report.cmue else None

    if "pdq" in metrics:
        if image_sizes is None:
            raise ValidationError("PDQ needs image sizes")
        details = {}
        report.PDQ = pdq_score(ds, gts, image_sizes, details)
        report.pdq_components = details
    return report
