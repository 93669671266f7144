"""Command-line entry point: simulate, fuse, eval, loss-check, render.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import groupby
from pathlib import Path


from . import io
from .errors import NumericalError, ValidationError
from .fusion import FusionConfig, bayesod_inference
from .losses import LOSSES, grad_check
from .metrics import evaluate
from .model import CategoryTable
from .priors import BoxPrior, CategoryCountConfig, DirichletState
from .render import render_dataset
from .synth import SceneConfig, generate_scene

logger = logging.getLogger("bayesod")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on|off")
    return v == "on"


def _size(v: str):
    try:
        w, h = v.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError("expected WxH, e.g. 640x480") from None


def _pair(v: str):
    try:
        a, b = (float(x) for x in v.split(","))
        return a, b
    except ValueError:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers") from None


# -- simulate -----------------------------------------------------------------

_INT_KEYS = {"image_width", "image_height", "num_images", "T", "seed"}
_FLOAT_KEYS = {"false_anchor_rate", "noise", "corner_correlation", "logit_sharpness",
               "background_sharpness", "logit_noise"}
_RANGE_KEYS = {"objects_per_image": int, "anchors_per_object": int, "box_size": float}


def parse_scene_config(text: str, overrides=()) -> SceneConfig:
    """Flat ``key = value`` text (no sections) plus ``key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[scene]\n" + text)
    raw = dict(cp["scene"])
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    kw = {}
    names, background = None, None
    for key, val in raw.items():
        try:
            if key in _INT_KEYS:
                kw[key] = int(val)
            elif key in _FLOAT_KEYS:
                kw[key] = float(val)
            elif key in _RANGE_KEYS:
                lo, hi = (_RANGE_KEYS[key](x) for x in val.split(","))
                kw[key] = (lo, hi)
            elif key == "aleatoric_model":
                kw[key] = val
            elif key == "categories":
                names = tuple(x.strip() for x in val.split(",") if x.strip())
            elif key == "background_index":
                background = None if val.lower() in ("", "none") else int(val)
            else:
                raise ValidationError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"bad value for {key!r}: {val!r}") from None
    if names is not None or background is not None:
        kw["categories"] = CategoryTable(names or SceneConfig().categories.names, background)
    return SceneConfig(**kw)


def cmd_simulate(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = parse_scene_config(text, overrides)
    ids = range(cfg.num_images)
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            scenes = list(ex.map(generate_scene, [cfg] * cfg.num_images, ids, chunksize=16))
    else:
        scenes = [generate_scene(cfg, i) for i in ids]
    io.write_predictions(args.out, [(s.image_id, p) for s in scenes for p in s.predictions],
                         cfg.categories, cfg.T)
    io.write_ground_truth(args.gt, [g for s in scenes for g in s.ground_truth], cfg.categories,
                          (cfg.image_width, cfg.image_height))
    return EXIT_OK


# -- fuse ---------------------------------------------------------------------

def _load_prior_file(path, K):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        box = doc.get("box")
        box_prior = BoxPrior.gaussian(box["mean"], box["cov"]) if box else BoxPrior()
        alpha = doc.get("alpha")
        dir_prior = DirichletState(alpha) if alpha is not None else None
    except (AttributeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed prior file ({exc})") from None
    if dir_prior is not None and dir_prior.K != K:
        raise ValidationError(f"prior alpha has {dir_prior.K} entries, predictions have K={K}")
    return box_prior, dir_prior


def _fuse_image(job):
    image_id, preds, cfg = job
    notices = []
    dets = bayesod_inference(preds, cfg, notices, image_id=image_id)
    return dets, notices


def cmd_fuse(args) -> int:
    if not (args.epistemic or args.aleatoric):
        raise UsageError("fuse: --epistemic off and --aleatoric off together leave no covariance")
    hdr, items = io.read_predictions(args.preds)
    box_prior, dir_prior = BoxPrior(), None
    if args.prior == "file":
        if not args.prior_file:
            raise UsageError("fuse: --prior file needs --prior-file")
        box_prior, dir_prior = _load_prior_file(args.prior_file, hdr.K)
    cfg = FusionConfig(
        affinity_threshold=args.affinity_iou,
        score_threshold=args.score_threshold,
        mode=args.mode,
        covariance=args.covariance,
        epistemic=args.epistemic,
        aleatoric=args.aleatoric,
        box_prior=box_prior,
        dirichlet_prior=dir_prior,
        counts=CategoryCountConfig(args.cat_samples, args.cat_counts, args.seed),
        T=hdr.T,
        background_index=hdr.background_index,
    )
    items = sorted(items, key=lambda it: it[0])
    jobs = [(img, [p for _, p in grp], cfg) for img, grp in groupby(items, key=lambda it: it[0])]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            results = list(ex.map(_fuse_image, jobs, chunksize=8))
    else:
        results = [_fuse_image(j) for j in jobs]
    io.write_detections(args.out, [d for dets, _ in results for d in dets], hdr.table)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    with log_path.open("w", encoding="utf-8", newline="\n") as fh:
        for _, notices in results:
            for n in notices:
                fh.write(io.dumps_line(n.as_dict()) + "\n")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    dhdr, dets = io.read_detections(args.dets)
    ghdr, gts = io.read_ground_truth(args.gt)
    if dhdr.K != ghdr.K:
        raise ValidationError(f"detections have K={dhdr.K}, ground truth K={ghdr.K}")
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    size = args.image_size or ghdr.image_size
    if "pdq" in metrics and size is None:
        raise UsageError("eval: PDQ needs --image-size or an image_size in the ground-truth header")
    report = evaluate(dets, gts, ghdr.categories, metrics, image_sizes=tuple(size) if size else None,
                      background_index=dhdr.background_index)
    out = report.as_dict()
    if args.out:
        io.write_json(args.out, out)
    else:
        sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- loss-check ---------------------------------------------------------------

def cmd_loss_check(args) -> int:
    samples = io.read_loss_samples(args.samples)
    fn = LOSSES[args.loss][0]
    lines = []
    worst = 0.0
    for i, s in enumerate(samples):
        rec = {"index": i, "loss": args.loss, "value": fn(s)}
        if args.grad_check:
            err = grad_check(args.loss, s, args.step)
            rec["grad_max_rel_err"] = err
            worst = max(worst, err)
        lines.append(io.dumps_line(rec))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.grad_check:
        logger.info("max relative gradient error over %d samples: %.3g", len(samples), worst)
    return EXIT_OK


# -- render -------------------------------------------------------------------

def cmd_render(args) -> int:
    _, dets = io.read_detections(args.dets)
    render_dataset(dets, args.image_size, args.entropy_thresholds, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bayesod", description="Bayesian fusion for object-detector outputs.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="generate a seeded synthetic corpus")
    s.add_argument("--config", help="flat key=value scene config file")
    s.add_argument("--out", required=True, help="predictions JSON-Lines")
    s.add_argument("--gt", required=True, help="ground-truth JSON-Lines")
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fuse", help="per-anchor posteriors, clustering and fusion")
    f.add_argument("--preds", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--mode", choices=("bayesod", "nms"), default="bayesod")
    f.add_argument("--covariance", choices=("full", "diagonal"), default="full")
    f.add_argument("--epistemic", type=_on_off, default=True, metavar="on|off")
    f.add_argument("--aleatoric", type=_on_off, default=True, metavar="on|off")
    f.add_argument("--affinity-iou", type=float, default=0.5)
    f.add_argument("--score-threshold", type=float, default=0.1)
    f.add_argument("--cat-counts", choices=("expected", "sampled"), default="expected")
    f.add_argument("--cat-samples", type=int, default=30)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--prior", choices=("noninformative", "file"), default="noninformative")
    f.add_argument("--prior-file", help='JSON: {"box": {"mean": [...], "cov": [[...]]}, "alpha": [...]}')
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--log", help="sidecar warnings file (default: <out>.log)")
    f.set_defaults(func=cmd_fuse)

    e = sub.add_parser("eval", help="mAP, MUE and PDQ")
    e.add_argument("--dets", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--metrics", default="map,mue,pdq")
    e.add_argument("--out")
    e.add_argument("--image-size", type=_size)
    e.set_defaults(func=cmd_eval)

    lc = sub.add_parser("loss-check", help="evaluate regression losses on samples")
    lc.add_argument("--samples", required=True)
    lc.add_argument("--loss", choices=tuple(LOSSES), required=True)
    lc.add_argument("--grad-check", action="store_true")
    lc.add_argument("--step", type=float, default=1e-5)
    lc.add_argument("--out")
    lc.set_defaults(func=cmd_loss_check)

    r = sub.add_parser("render", help="SVG overlays with corner confidence ellipses")
    r.add_argument("--dets", required=True)
    r.add_argument("--image-size", type=_size, required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--entropy-thresholds", type=_pair, required=True, metavar="T1,T2")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
