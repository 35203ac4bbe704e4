"""Batch anonymization: IFA, VAA and GSA over a record file.

The output of a run is, per record, the conditioning triple

* ``z_id``: identity feature (recast from the distracted activation when IFA is on),
* ``z_a``:  appearance reference (a sampled gallery delegate when VAA is on),
* ``z_g``:  landmark structure plus background mask (delegate-based when GSA is on),

together with a per-stage audit. Items are processed independently, written
atomically to ``items/<id>.json`` and then merged in input order.
"""

from __future__ import annotations

import csv
import io as _io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor
from .classifier import MiniNet, forward, identity_feature
from .errors import IdAnonError
from .evaluation import EvalRecord, VerificationConfig, attribute_agreement, match_rates, threshold_table
from .fixtures import expression_label, pose_label
from .gsa import anonymize_geometry, background_mask
from .ifa import DistractionConfig, distract
from .io import atomic_write_text, read_gallery, read_jsonl, write_eval_records, write_jsonl
from .ipd import DpConfig, GalleryItem, build_candidate_set, ipd_sample, item_seed
from .landmarks import LandmarkSet

NULLED_TOL = 1e-5
ATTRIBUTES = ("gender", "age", "expression", "pose")


@dataclass(frozen=True)
class DistractionSettings:
    k: int = 1
    weights: tuple[float, ...] | None = None
    mode: str = "paper-sum"
    bottom_j: int = 0

    def config(self, k: int | None = None, mode: str | None = None) -> DistractionConfig:
        k = self.k if k is None else k
        weights = self.weights if k == self.k else None
        return DistractionConfig(k=k, weights=weights, mode=mode or self.mode, bottom_j=self.bottom_j)


@dataclass(frozen=True)
class DpSettings:
    epsilon: float = 1.0
    k: int = 8
    sensitivity: float = 1.0

    def config(self, seed: int) -> DpConfig:
        return DpConfig(epsilon=self.epsilon, sensitivity=self.sensitivity, seed=seed)


@dataclass(frozen=True)
class Paths:
    gallery: str = "gallery.jsonl"
    records: str = "records.jsonl"
    net: str = "net"
    output: str = "out"


@dataclass(frozen=True)
class Stages:
    ifa: bool = True
    vaa: bool = True
    gsa: bool = True
    vaa_utility: str = "appearance"
    gsa_utility: str = "geometry"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    distraction: DistractionSettings = field(default_factory=DistractionSettings)
    dp: DpSettings = field(default_factory=DpSettings)
    paths: Paths = field(default_factory=Paths)
    stages: Stages = field(default_factory=Stages)
    image_shape: tuple[int, int] = (256, 256)
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "RunConfig":
        """Build from the JSON config layout; relative paths resolve against ``base_dir``."""
        known = {"seed", "distraction", "dp", "paths", "stages", "image_shape", "jobs"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        dist = dict(d.get("distraction", {}))
        if dist.get("weights") is not None:
            dist["weights"] = tuple(dist["weights"])
        paths = dict(d.get("paths", {}))
        if base_dir is not None:
            paths = {k: str(Path(base_dir) / v) for k, v in paths.items()}
        def build(kind, section, values):
            extra = set(values) - {f.name for f in fields(kind)}
            if extra:
                raise ValueError(f"unknown config keys in {section!r}: {sorted(extra)}")
            return kind(**values)

        return cls(
            seed=int(d.get("seed", 0)),
            distraction=build(DistractionSettings, "distraction", dist),
            dp=build(DpSettings, "dp", d.get("dp", {})),
            paths=build(Paths, "paths", paths),
            stages=build(Stages, "stages", d.get("stages", {})),
            image_shape=tuple(d.get("image_shape", (256, 256))),
            jobs=int(d.get("jobs", 1)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        if d["distraction"]["weights"] is not None:
            d["distraction"]["weights"] = list(d["distraction"]["weights"])
        return d

    def validate(self) -> None:
        for name in ("gallery", "records", "net"):
            p = Path(getattr(self.paths, name))
            if not p.exists():
                raise FileNotFoundError(f"{name} path does not exist: {p}")
        self.distraction.config()
        self.dp.config(self.seed)
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass
class Inputs:
    net: MiniNet
    gallery: list[GalleryItem]
    records: list[dict]
    images: list[np.ndarray]


def load_inputs(cfg: RunConfig) -> Inputs:
    cfg.validate()
    records = list(read_jsonl(cfg.paths.records))
    base = Path(cfg.paths.records).parent
    images = [tensor.load(base / r["image"]) for r in records]
    return Inputs(MiniNet.load(cfg.paths.net), read_gallery(cfg.paths.gallery), records, images)


def _floats(v) -> list[float]:
    return [float(x) for x in np.asarray(v, dtype=np.float64).ravel()]


def process_item(cfg: RunConfig, inputs: Inputs, idx: int) -> dict:
    """Run the enabled stages on one record. Stage errors are caught and recorded."""
    rec, image = inputs.records[idx], inputs.images[idx]
    seed = item_seed(cfg.seed, idx)
    rng_vaa, rng_gsa = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    out = {"id": rec["id"], "index": idx, "source_id": rec["source_id"], "seed": seed, "errors": {}}
    audit = {}

    a, pred = forward(inputs.net, image)
    f = identity_feature(a)
    z_id = f
    if cfg.stages.ifa:
        try:
            res = distract(inputs.net, a, pred, cfg.distraction.config())
            z_id = res.recast_feature
            audit["ifa"] = res.summary()
        except (IdAnonError, ValueError) as exc:
            out["errors"]["ifa"] = f"{type(exc).__name__}: {exc}"

    emb = np.asarray(rec["embedding"], dtype=np.float32)
    z_a = {"source": "original", "id": rec["source_id"], "embedding": _floats(emb)}
    appearance_attrs = {k: rec["attributes"][k] for k in ("gender", "age") if k in rec.get("attributes", {})}
    if cfg.stages.vaa:
        try:
            cands = build_candidate_set(emb, inputs.gallery, cfg.dp.k, exclude_id=rec["source_id"])
            item, sa = ipd_sample(cands, cfg.stages.vaa_utility, cfg.dp.config(seed), rng_vaa)
            z_a = {"source": "delegate", "id": item.id, "gallery_index": sa.candidate_indices[sa.chosen],
                   "embedding": _floats(item.embedding)}
            attrs = item.meta.get("attributes", {})
            appearance_attrs = {k: attrs[k] for k in ("gender", "age") if k in attrs}
            audit["vaa"] = sa.as_dict()
        except (IdAnonError, ValueError) as exc:
            out["errors"]["vaa"] = f"{type(exc).__name__}: {exc}"

    s = LandmarkSet(rec["landmarks"])
    structure, mask = s, None
    if cfg.stages.gsa:
        try:
            zg, _, ga = anonymize_geometry(
                s, inputs.gallery, cfg.dp.k, cfg.dp.config(seed), query_id=rec["source_id"],
                query_pose=rec.get("pose"), image_shape=cfg.image_shape, rng=rng_gsa,
                utility=cfg.stages.gsa_utility,
            )
            structure, mask = zg.structure, zg.background_mask
            audit["gsa"] = ga.as_dict()
        except (IdAnonError, ValueError) as exc:
            out["errors"]["gsa"] = f"{type(exc).__name__}: {exc}"
    if mask is None:
        mask = background_mask(s, cfg.image_shape)

    out["z_id"] = _floats(z_id)
    out["z_a"] = z_a
    out["z_g"] = {"landmarks": structure.to_list(), "mask_background_pixels": int(mask.sum())}
    out["original"] = {"z_id": _floats(f), "embedding": _floats(emb), "landmarks": s.to_list()}
    out["attributes_original"] = dict(rec.get("attributes", {}))
    out["attributes_anonymized"] = {**appearance_attrs, "expression": expression_label(structure),
                                    "pose": pose_label(structure)}
    out["audit"] = audit
    out["_mask"] = mask
    return out


def _map(fn, n: int, jobs: int) -> list:
    if jobs <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n)))


def _rates(records: Sequence[EvalRecord], gallery) -> list[dict]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return threshold_table(records, gallery)


def evaluate(items: list[dict], gallery: Sequence[GalleryItem]) -> dict:
    """Identity-feature and appearance privacy tables plus attribute agreement."""
    ok = [it for it in items if "z_id" in it]
    if not ok:
        return {"evaluated": 0}
    id_records = [EvalRecord(it["source_id"], it["original"]["z_id"], it["z_id"],
                             it["attributes_original"], it["attributes_anonymized"]) for it in ok]
    id_gallery = [(it["source_id"], np.asarray(it["original"]["z_id"])) for it in ok]
    app_records = [EvalRecord(it["source_id"], it["original"]["embedding"], it["z_a"]["embedding"]) for it in ok]
    rates, notes = attribute_agreement(id_records, ATTRIBUTES)
    return {
        "evaluated": len(ok),
        "identity": _rates(id_records, id_gallery),
        "appearance": _rates(app_records, gallery),
        "attributes": rates,
        "attribute_notes": notes,
    }


def run_items(cfg: RunConfig, inputs: Inputs | None = None) -> list[dict]:
    inputs = inputs or load_inputs(cfg)
    return _map(lambda i: process_item(cfg, inputs, i), len(inputs.records), cfg.jobs)


def _dumps(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def run_pipeline(cfg: RunConfig, inputs: Inputs | None = None) -> dict:
    """Process every record and write the run directory; returns the report."""
    inputs = inputs or load_inputs(cfg)
    out = Path(cfg.paths.output)
    (out / "items").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def work(i):
        item = process_item(cfg, inputs, i)
        mask = item.pop("_mask")
        tensor.save(out / "masks" / f"{item['id']}.adt", mask)
        item["z_g"]["mask"] = f"masks/{item['id']}.adt"
        atomic_write_text(out / "items" / f"{item['id']}.json", _dumps(item))
        return item

    items = _map(work, len(inputs.records), cfg.jobs)
    write_jsonl(out / "triples.jsonl",
                ({"id": it["id"], "z_id": it["z_id"], "z_a": it["z_a"], "z_g": it["z_g"]} for it in items))
    ok = [it for it in items if "z_id" in it]
    write_eval_records(out / "eval_records.jsonl",
                       (EvalRecord(it["source_id"], it["original"]["z_id"], it["z_id"],
                                   it["attributes_original"], it["attributes_anonymized"]) for it in ok))
    write_jsonl(out / "eval_gallery.jsonl",
                ({"id": it["source_id"], "embedding": it["original"]["z_id"]} for it in ok))
    recorded = cfg.to_dict()
    # the run directory and worker count do not affect results; leaving them out keeps reruns byte-identical
    recorded["paths"].pop("output")
    recorded.pop("jobs")
    report = {
        "config": recorded,
        "items": len(items),
        "errors": {it["id"]: it["errors"] for it in items if it["errors"]},
        "metrics": evaluate(items, inputs.gallery),
    }
    atomic_write_text(out / "report.json", _dumps(report))
    return report


def _csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def sweep_k(cfg: RunConfig, k_values: Sequence[int], inputs: Inputs | None = None) -> tuple[list[dict], str]:
    """Distraction statistics per K for both combination modes.

    For every K: mean and max relative residual over the top-K classes,
    the mean and minimum number of nulled classes (relative residual below
    1e-5), the mean top-1 logit drop, the mean feature displacement
    ``||f - f_hat||`` and the identity ReID rate at cosine 0.30.
    """
    inputs = inputs or load_inputs(cfg)
    n = inputs.net.n_classes
    bad = [k for k in k_values if not 1 <= k <= n]
    if bad:
        raise ValueError(f"K values {bad} outside [1, {n}]")
    fwd = [forward(inputs.net, im) for im in inputs.images]
    feats = [identity_feature(a) for a, _ in fwd]
    ids = [r["source_id"] for r in inputs.records]
    gallery = list(zip(ids, feats))
    vcfg = VerificationConfig("cosine", 0.30)
    rows = []
    for k in k_values:
        row = {"k": int(k)}
        for mode in ("paper-sum", "exact-joint"):
            dcfg = DistractionConfig(k=int(k), mode=mode)
            rel, nulled, drop, disp, recs = [], [], [], [], []
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for (a, pred), f, sid in zip(fwd, feats, ids):
                    res = distract(inputs.net, a, pred, dcfg)
                    rel.append(res.relative_residuals)
                    nulled.append(int(np.sum(res.relative_residuals < NULLED_TOL)))
                    c1 = res.classes[0]
                    drop.append(float(res.logits_before[c1] - res.logits_after[c1]))
                    disp.append(float(np.linalg.norm(f - res.recast_feature)))
                    recs.append(EvalRecord(sid, f, res.recast_feature))
                reid = match_rates(recs, gallery, vcfg).reid
            p = mode.replace("-", "_")
            row[f"{p}_mean_residual"] = float(np.mean([r.mean() for r in rel]))
            row[f"{p}_max_residual"] = float(max(r.max() for r in rel))
            row[f"{p}_mean_nulled"] = float(np.mean(nulled))
            row[f"{p}_min_nulled"] = int(min(nulled))
            row[f"{p}_top1_logit_drop"] = float(np.mean(drop))
            row[f"{p}_feature_displacement"] = float(np.mean(disp))
            row[f"{p}_reid_cos030"] = float(reid)
        rows.append(row)
    return rows, _csv(rows)


ABLATIONS: dict[str, dict] = {
    "full": {},
    "wo_ifa": {"ifa": False},
    "wo_vaa": {"vaa": False},
    "wo_gsa": {"gsa": False},
    "wo_u_a": {"vaa_utility": "uniform"},
    "wo_u_g": {"gsa_utility": "uniform"},
    "all_off": {"ifa": False, "vaa": False, "gsa": False},
}


def _mean_chosen_distance(items: list[dict], stage: str) -> float:
    vals = [it["audit"][stage]["distances"][it["audit"][stage]["chosen"]] for it in items if stage in it["audit"]]
    return float(np.mean(vals)) if vals else float("nan")


def ablate(cfg: RunConfig, variants: Sequence[str] = tuple(ABLATIONS), inputs: Inputs | None = None
           ) -> tuple[list[dict], str]:
    """Stage and utility toggles; one CSV row per variant."""
    inputs = inputs or load_inputs(cfg)
    rows = []
    for name in variants:
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        vcfg = replace(cfg, stages=replace(cfg.stages, **ABLATIONS[name]))
        items = run_items(vcfg, inputs)
        m = evaluate(items, inputs.gallery)
        row = {"variant": name}
        for table in ("identity", "appearance"):
            cos030 = next(r for r in m[table] if r["metric"] == "cosine" and r["threshold"] == 0.30)
            row[f"{table}_reid_cos030"] = float(cos030["reid"])
            row[f"{table}_ids_cos030"] = float(cos030["ids"])
        for a in ATTRIBUTES:
            row[f"attr_{a}"] = float(m["attributes"].get(a, float("nan")))
        row["vaa_chosen_distance"] = _mean_chosen_distance(items, "vaa")
        row["gsa_chosen_distance"] = _mean_chosen_distance(items, "gsa")
        row["errors"] = sum(bool(it["errors"]) for it in items)
        rows.append(row)
    return rows, _csv(rows)
