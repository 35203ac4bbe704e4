"""Command-line front end (``idanon``)."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor
from .cam import grad_cam, to_pgm
from .classifier import MiniNet, forward
from .errors import IdAnonError
from .evaluation import VerificationConfig, attribute_agreement, match_rates, threshold_table
from .fixtures import FixtureCounts, make_fixtures
from .gsa import anonymize_geometry, to_svg
from .ifa import MODES, DistractionConfig, distract
from .io import atomic_write_text, read_eval_records, read_gallery, read_jsonl
from .ipd import UTILITIES, DpConfig, build_candidate_set, ipd_sample
from .landmarks import LandmarkSet
from .losses import LossInputs, LossWeights, all_losses
from .pipeline import ABLATIONS, ATTRIBUTES, RunConfig, ablate, run_pipeline, sweep_k


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, path: str | None) -> None:
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(","))


def _run_config(args) -> RunConfig:
    if args.config:
        p = Path(args.config)
        cfg = RunConfig.from_dict(json.loads(p.read_text()), base_dir=p.parent)
    else:
        cfg = RunConfig()
    if getattr(args, "data", None):
        d = Path(args.data)
        cfg = replace(cfg, paths=replace(cfg.paths, gallery=str(d / "gallery.jsonl"),
                                         records=str(d / "records.jsonl"), net=str(d / "net")))
    if getattr(args, "out", None):
        cfg = replace(cfg, paths=replace(cfg.paths, output=args.out))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


# subcommands ---------------------------------------------------------------

def cmd_fixtures(args) -> int:
    counts = FixtureCounts(identities=args.identities, per_identity=args.per_identity, records=args.records)
    summary = make_fixtures(args.out, _seed(args), counts)
    sys.stdout.write(_dump(summary))
    return 0


def cmd_cam(args) -> int:
    net = MiniNet.load(args.net)
    a, pred = forward(net, tensor.load(args.image))
    c = pred.ranking[0] if args.class_idx is None else args.class_idx
    res = grad_cam(net, a, int(c))
    tensor.save(args.out, res.heatmap)
    if args.pgm:
        Path(args.pgm).write_bytes(to_pgm(res.heatmap))
    sys.stdout.write(_dump({"class": int(c), "alpha": [float(v) for v in res.alpha],
                            "heatmap_max": float(np.max(res.heatmap))}))
    return 0


def cmd_ifa(args) -> int:
    net = MiniNet.load(args.net)
    a, pred = forward(net, tensor.load(args.image))
    cfg = DistractionConfig(k=args.k, weights=_floats(args.weights) if args.weights else None,
                            mode=args.mode, bottom_j=args.bottom_j)
    res = distract(net, a, pred, cfg)
    if args.out_adt:
        tensor.save(args.out_adt, res.a_hat)
    _emit(_dump(res.summary()), args.out_json)
    return 0


def _record(path: str, index: int) -> dict:
    recs = list(read_jsonl(path))
    if not 0 <= index < len(recs):
        raise IndexError(f"record index {index} out of range (0..{len(recs) - 1})")
    return recs[index]


def cmd_sample(args) -> int:
    gallery = read_gallery(args.gallery)
    rec = _record(args.records, args.index)
    q = np.asarray(rec["embedding"], dtype=np.float32)
    cands = build_candidate_set(q, gallery, args.k, exclude_id=rec["source_id"] if args.exclude_same_id else None)
    dp = DpConfig(epsilon=args.epsilon, sensitivity=args.sensitivity, seed=_seed(args))
    _, audit = ipd_sample(cands, args.utility, dp, np.random.default_rng(dp.seed))
    _emit(_dump(audit.as_dict()), args.out)
    return 0


def cmd_gsa(args) -> int:
    gallery = read_gallery(args.gallery)
    rec = _record(args.records, args.index)
    s = LandmarkSet(rec["landmarks"])
    dp = DpConfig(epsilon=args.epsilon, sensitivity=args.sensitivity, seed=_seed(args))
    zg, delegate, audit = anonymize_geometry(s, gallery, args.k, dp, query_id=rec["source_id"],
                                             query_pose=rec.get("pose"), rng=np.random.default_rng(dp.seed))
    out = {"delegate_id": delegate, "landmarks": zg.structure.to_list(),
           "mask_background_pixels": int(zg.background_mask.sum()), "audit": audit.as_dict()}
    if args.svg:
        d = next(g for g in gallery if g.id == delegate and g.landmarks is not None)
        atomic_write_text(args.svg, to_svg({"original": s, "s_hat": zg.structure, "delegate": d.landmarks}))
    _emit(_dump(out), args.out)
    return 0


def _value(v, base: Path):
    if isinstance(v, str):
        return np.asarray(tensor.load(base / v), dtype=np.float64)
    return np.asarray(v, dtype=np.float64)


def load_loss_manifest(path) -> tuple[LossInputs, LossWeights, str]:
    """Manifest: ``{"mode", "norm", "weights": {...}, "inputs": {slot: file.adt | numbers}}``.

    ``disc_feats_real``/``disc_feats_fake`` are lists of such values and
    ``perceptual`` a list of ``{"x", "xhat", "xbar"}`` dicts.
    """
    p = Path(path)
    m = json.loads(p.read_text())
    base = p.parent
    kw = {"mode": m.get("mode", "reconstruction")}
    for slot, v in m.get("inputs", {}).items():
        if slot in ("disc_feats_real", "disc_feats_fake"):
            kw[slot] = [_value(x, base) for x in v]
        elif slot == "perceptual":
            kw[slot] = [{k: _value(x, base) for k, x in ext.items()} for ext in v]
        else:
            kw[slot] = _value(v, base)
    return LossInputs(**kw), LossWeights(**m.get("weights", {})), m.get("norm", "l2")


def cmd_loss(args) -> int:
    inputs, weights, norm = load_loss_manifest(args.manifest)
    sys.stdout.write(_dump(all_losses(inputs, weights, norm)))
    return 0


def cmd_eval(args) -> int:
    records = read_eval_records(args.records)
    gallery = read_gallery(args.gallery)
    if args.paper_thresholds:
        rows = threshold_table(records, gallery)
        lines = ["config      (ReID, IDS)"] + [f"{r['label']:<11} {r['cell']}" for r in rows]
        out = {"table": rows}
        sys.stdout.write("\n".join(lines) + "\n")
    else:
        cfg = VerificationConfig(args.metric, args.threshold)
        out = {"config": cfg.label, **match_rates(records, gallery, cfg).as_dict()}
        sys.stdout.write(f"{cfg.label}: ReID {out['reid']:.2f}%  IDS {out['ids']:.2f}%\n")
    names = args.attributes.split(",") if args.attributes else list(ATTRIBUTES)
    out["attributes"], out["attribute_notes"] = attribute_agreement(records, names)
    if args.out:
        atomic_write_text(args.out, _dump(out))
    return 0


def cmd_run(args) -> int:
    report = run_pipeline(_run_config(args))
    sys.stdout.write(_dump({"items": report["items"], "errors": report["errors"],
                            "identity": [r["cell"] for r in report["metrics"].get("identity", [])]}))
    return 0


def cmd_sweep_k(args) -> int:
    _, text = sweep_k(_run_config(args), range(args.k_min, args.k_max + 1))
    _emit(text, args.csv)
    return 0


def cmd_ablate(args) -> int:
    variants = args.variants.split(",") if args.variants else tuple(ABLATIONS)
    _, text = ablate(_run_config(args), variants)
    _emit(text, args.csv)
    return 0


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def globals_(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default, help="global seed (default 0 or config value)")
        g.add_argument("--config", default=default, help="JSON file mirroring RunConfig")
        g.add_argument("--jobs", type=int, default=default, help="worker threads for per-item stages")
        return g

    # flags are accepted before or after the subcommand; SUPPRESS keeps the
    # subparser from overwriting a value given before it
    common = globals_(argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="idanon", description="Identity anonymization toolkit",
                                parents=[globals_(None)])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    sp = add("fixtures", cmd_fixtures, "generate a seeded synthetic fixture set")
    sp.add_argument("--out", required=True)
    sp.add_argument("--identities", type=int, default=12)
    sp.add_argument("--per-identity", type=int, default=6)
    sp.add_argument("--records", type=int, default=16)

    sp = add("cam", cmd_cam, "Grad-CAM heatmap of one image")
    sp.add_argument("--net", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--class", dest="class_idx", type=int, default=None, help="default: top-1")
    sp.add_argument("--out", required=True, help="heatmap ADT path")
    sp.add_argument("--pgm", help="optional 8-bit PGM preview")

    sp = add("ifa", cmd_ifa, "attention distraction on one image")
    sp.add_argument("--net", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--weights", help="comma-separated, one per top-K class")
    sp.add_argument("--mode", choices=MODES, default="paper-sum")
    sp.add_argument("--bottom-j", type=int, default=0)
    sp.add_argument("--out-json")
    sp.add_argument("--out-adt", help="write the distracted activation")

    for name, fn, help_ in (("sample", cmd_sample, "draw an appearance delegate for one record"),
                            ("gsa", cmd_gsa, "geometry anonymization for one record")):
        sp = add(name, fn, help_)
        sp.add_argument("--gallery", required=True)
        sp.add_argument("--records", required=True)
        sp.add_argument("--index", type=int, default=0)
        sp.add_argument("--k", type=int, default=8)
        sp.add_argument("--epsilon", type=float, default=1.0)
        sp.add_argument("--sensitivity", type=float, default=1.0)
        sp.add_argument("--out")
        if name == "sample":
            sp.add_argument("--utility", choices=sorted(UTILITIES), default="appearance")
            sp.add_argument("--exclude-same-id", action="store_true")
        else:
            sp.add_argument("--svg")

    sp = add("loss", cmd_loss, "evaluate the loss terms from a manifest")
    sp.add_argument("manifest")

    sp = add("eval", cmd_eval, "ReID / IDS / attribute agreement")
    sp.add_argument("--records", required=True)
    sp.add_argument("--gallery", required=True)
    sp.add_argument("--metric", choices=("cosine", "l2"), default="cosine")
    sp.add_argument("--threshold", type=float, default=0.30)
    sp.add_argument("--paper-thresholds", action="store_true", help="all five published threshold settings")
    sp.add_argument("--attributes", help="comma-separated attribute names")
    sp.add_argument("--out")

    for name, fn, help_ in (("run", cmd_run, "full batch pipeline"),
                            ("sweep-k", cmd_sweep_k, "distraction statistics over a K range"),
                            ("ablate", cmd_ablate, "stage and utility toggles")):
        sp = add(name, fn, help_)
        sp.add_argument("--data", help="fixture directory (sets gallery, records and net paths)")
        sp.add_argument("--out", help="output directory")
        if name == "sweep-k":
            sp.add_argument("--k-min", type=int, default=1)
            sp.add_argument("--k-max", type=int, default=10)
        if name != "run":
            sp.add_argument("--csv", help="write the CSV here instead of stdout")
        if name == "ablate":
            sp.add_argument("--variants", help=f"comma-separated subset of {','.join(ABLATIONS)}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (IdAnonError, ValueError, FileNotFoundError, IndexError) as exc:
        sys.stderr.write(f"idanon {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
