"""JSON-Lines wire formats for predictions, detections and ground truth.

Every file starts with a header line::

    {"schema": "bayesod.<kind>", "version": 1, "K": ..., "T": ..., "categories": [...], ...}

followed by one record per line. Floats are written with ``repr`` so a
write/read round trip is exact. 4x4 covariances travel as their 10-value
row-major upper triangle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .aggregate import AnchorPrediction
from .errors import ParseError, ValidationError
from .fusion import FinalDetection
from .losses import LdlFactors, LossSample
from .metrics import GroundTruthObject
from .model import Box, BoxGaussian, CategoricalDist, CategoryTable, categorical_entropy, gaussian_entropy
from .priors import DirichletState

SCHEMA_VERSION = 1
_TRIU = np.triu_indices(4)


def pack_cov(cov) -> List[float]:
    """Row-major upper triangle of a 4x4 matrix (10 values)."""
    return [float(v) for v in np.asarray(cov, dtype=float)[_TRIU]]


def unpack_cov(vals) -> np.ndarray:
    v = np.asarray(vals, dtype=float)
    if v.shape != (10,):
        raise ValidationError(f"packed covariance needs 10 values, got {v.size}")
    out = np.zeros((4, 4))
    out[_TRIU] = v
    return out + np.triu(out, 1).T


def dumps_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


@dataclass
class Header:
    kind: str
    K: int
    categories: Tuple[str, ...]
    T: Optional[int] = None
    background_index: Optional[int] = None
    cov_packing: str = "upper"
    image_size: Optional[Tuple[int, int]] = None

    @property
    def table(self) -> CategoryTable:
        return CategoryTable(self.categories, self.background_index)

    def as_dict(self) -> dict:
        out = {"schema": f"bayesod.{self.kind}", "version": SCHEMA_VERSION, "K": self.K,
               "categories": list(self.categories), "background_index": self.background_index}
        if self.kind == "predictions":
            out["T"] = self.T
            out["cov_packing"] = self.cov_packing
        if self.image_size is not None:
            out["image_size"] = list(self.image_size)
        return out


def _parse_header(line: str, kind: str, path) -> Header:
    try:
        h = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed header: {exc.msg}", path, 1) from None
    if not isinstance(h, dict) or h.get("schema") != f"bayesod.{kind}":
        raise ParseError(f"expected a bayesod.{kind} header", path, 1)
    if h.get("version") != SCHEMA_VERSION:
        raise ParseError(f"schema version {h.get('version')!r} is not {SCHEMA_VERSION}", path, 1)
    try:
        cats = tuple(h["categories"])
        K = int(h["K"])
        if len(cats) != K:
            raise ParseError(f"header lists {len(cats)} categories but K={K}", path, 1)
        hdr = Header(kind, K, cats, h.get("T"), h.get("background_index"),
                     h.get("cov_packing", "upper"),
                     tuple(h["image_size"]) if h.get("image_size") else None)
        hdr.table  # validates names / background index
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad header: {exc}", path, 1) from None
    if kind == "predictions":
        if not isinstance(hdr.T, int) or hdr.T < 1:
            raise ParseError("predictions header needs T >= 1", path, 1)
        if hdr.cov_packing not in ("upper", "diag"):
            raise ParseError(f"unknown cov_packing {hdr.cov_packing!r}", path, 1)
    return hdr


def _iter_lines(path, kind):
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise ParseError("empty file (missing header)", path, 1)
        header = _parse_header(first, kind, path)
        yield header
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", path, lineno) from None
            yield lineno, rec


def _write(path, header: Header, records: Iterable[dict]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_line(header.as_dict()) + "\n")
        for rec in records:
            fh.write(dumps_line(rec) + "\n")


def _expect(cond, msg, path, lineno):
    if not cond:
        raise ParseError(msg, path, lineno)


# -- predictions --------------------------------------------------------------

def write_predictions(path, items: Sequence[Tuple[int, AnchorPrediction]], table: CategoryTable,
                      T: int, packing: str = "upper") -> None:
    """``items`` is a sequence of (image_id, AnchorPrediction)."""
    def recs():
        for image_id, p in items:
            if packing == "diag":
                covs = [[float(v) for v in np.diag(c)] for c in p.aleatoric_covs]
            else:
                covs = [pack_cov(c) for c in p.aleatoric_covs]
            yield {"image_id": int(image_id), "anchor_id": p.anchor_id,
                   "box_samples": p.box_samples.tolist(), "aleatoric_covs": covs,
                   "logits": p.logit_samples.tolist()}

    _write(path, Header("predictions", table.K, table.names, T, table.background_index, packing), recs())


def read_predictions(path):
    """Return (header, [(image_id, AnchorPrediction), ...]) in file order."""
    it = _iter_lines(path, "predictions")
    hdr = next(it)
    width = 10 if hdr.cov_packing == "upper" else 4
    out = []
    for lineno, rec in it:
        try:
            boxes = np.asarray(rec["box_samples"], dtype=float)
            covs = np.asarray(rec["aleatoric_covs"], dtype=float)
            logits = np.asarray(rec["logits"], dtype=float)
            image_id, anchor_id = int(rec["image_id"]), int(rec["anchor_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad prediction record: {exc}", path, lineno) from None
        _expect(boxes.shape == (hdr.T, 4), f"box_samples shape {boxes.shape}, expected ({hdr.T}, 4)", path, lineno)
        _expect(covs.shape == (hdr.T, width), f"aleatoric_covs shape {covs.shape}, expected ({hdr.T}, {width})",
                path, lineno)
        _expect(logits.shape == (hdr.T, hdr.K), f"logits shape {logits.shape}, expected ({hdr.T}, {hdr.K})",
                path, lineno)
        full = np.stack([unpack_cov(c) if width == 10 else np.diag(c) for c in covs])
        try:
            out.append((image_id, AnchorPrediction(anchor_id, boxes, full, logits)))
        except ValidationError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return hdr, out


# -- detections ---------------------------------------------------------------

def detection_record(d: FinalDetection) -> dict:
    return {
        "image_id": int(d.image_id if d.image_id is not None else 0),
        "box_mean": [float(v) for v in d.box.mean],
        "box_cov": pack_cov(d.box.cov),
        "probs": [float(v) for v in d.category.probs],
        "alpha": [float(v) for v in d.dirichlet.alpha],
        "score": float(d.score),
        "gaussian_entropy": float(d.gaussian_entropy),
        "categorical_entropy": float(d.categorical_entropy),
        "member_anchor_ids": [int(a) for a in d.member_anchor_ids],
    }


def write_detections(path, dets: Iterable[FinalDetection], table: CategoryTable) -> None:
    _write(path, Header("detections", table.K, table.names, background_index=table.background_index),
           (detection_record(d) for d in dets))


def read_detections(path):
    it = _iter_lines(path, "detections")
    hdr = next(it)
    out = []
    for lineno, rec in it:
        try:
            probs = np.asarray(rec["probs"], dtype=float)
            alpha = np.asarray(rec["alpha"], dtype=float)
            _expect(probs.shape == (hdr.K,), f"record has {probs.size} probs, header K={hdr.K}", path, lineno)
            _expect(alpha.shape == (hdr.K,), f"record has {alpha.size} alphas, header K={hdr.K}", path, lineno)
            box = BoxGaussian(rec["box_mean"], unpack_cov(rec["box_cov"]))
            cat = CategoricalDist(probs)
            det = FinalDetection(box, cat, DirichletState(alpha), float(rec["score"]),
                                 float(rec["gaussian_entropy"]), float(rec["categorical_entropy"]),
                                 tuple(int(a) for a in rec["member_anchor_ids"]), int(rec["image_id"]))
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError, ArithmeticError) as exc:
            raise ParseError(f"bad detection record: {exc}", path, lineno) from None
        _expect(abs(det.gaussian_entropy - gaussian_entropy(box)) <= 1e-9 * max(1.0, abs(det.gaussian_entropy)),
                "gaussian_entropy inconsistent with box_cov", path, lineno)
        _expect(abs(det.categorical_entropy - categorical_entropy(cat)) <= 1e-9,
                "categorical_entropy inconsistent with probs", path, lineno)
        out.append(det)
    return hdr, out


# -- ground truth -------------------------------------------------------------

def write_ground_truth(path, gts: Iterable[GroundTruthObject], table: CategoryTable,
                       image_size: Optional[Tuple[int, int]] = None) -> None:
    recs = ({"image_id": int(g.image_id), "box": [float(v) for v in g.box.as_array()],
             "category_index": int(g.category_index)} for g in gts)
    _write(path, Header("groundtruth", table.K, table.names, background_index=table.background_index,
                        image_size=image_size), recs)


def read_ground_truth(path):
    it = _iter_lines(path, "groundtruth")
    hdr = next(it)
    out = []
    for lineno, rec in it:
        try:
            g = GroundTruthObject(int(rec["image_id"]), Box.from_array(rec["box"]), int(rec["category_index"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad ground-truth record: {exc}", path, lineno) from None
        _expect(g.category_index < hdr.K, f"category_index {g.category_index} >= K={hdr.K}", path, lineno)
        out.append(g)
    return hdr, out


# -- loss samples -------------------------------------------------------------

def read_loss_samples(path) -> List[LossSample]:
    """Header-less JSON-Lines of {"prediction", "target", "variance"? , "factors"?}."""
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                fac = rec.get("factors")
                out.append(LossSample(
                    rec["prediction"], rec["target"], variance=rec.get("variance"),
                    factors=LdlFactors(fac["l_strict"], fac["log_d"]) if fac else None))
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", path, lineno) from None
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad loss sample: {exc}", path, lineno) from None
    return out


def write_loss_samples(path, samples: Iterable[LossSample]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            rec = {"prediction": s.prediction.tolist(), "target": s.target.tolist()}
            if s.variance is not None:
                rec["variance"] = s.variance.tolist()
            if s.factors is not None:
                rec["factors"] = {"l_strict": s.factors.l_strict.tolist(), "log_d": s.factors.log_d.tolist()}
            fh.write(dumps_line(rec) + "\n")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
