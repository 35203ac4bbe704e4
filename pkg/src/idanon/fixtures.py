"""Seeded synthetic fixtures: identity-clustered gallery, input records and MiniNet weights.

Layout written by :func:`make_fixtures`::

    <out>/net/            MiniNet weights, prototype head fitted on held-out identity images
    <out>/gallery.jsonl   delegate gallery (embedding, landmarks, pose, attributes)
    <out>/records.jsonl   pipeline inputs, one per image to anonymize
    <out>/images/*.adt    3x32x32 input images
    <out>/fixtures.json   generator settings
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor
from .classifier import MiniNet, activations, identity_feature
from .io import atomic_write_text, write_gallery, write_jsonl
from .ipd import GalleryItem
from .landmarks import FaceParams, LandmarkSet, estimate_pose, mouth_opening, pose_bucket, random_shape, synth_landmarks

YAW_CENTRES = (-15.0, 0.0, 15.0)
IMAGE_SIZE = (256, 256)
EXPRESSION_THRESHOLD = 2.0  # px of mean inner-lip gap


@dataclass(frozen=True)
class FixtureCounts:
    identities: int = 12
    per_identity: int = 6
    records: int = 16
    embedding_dim: int = 32
    cluster_noise: float = 0.25

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.identities < 2:
            raise ValueError("need at least 2 identities")


def expression_label(s: LandmarkSet) -> str:
    return "open" if mouth_opening(s) > EXPRESSION_THRESHOLD else "closed"


def pose_label(s: LandmarkSet) -> str:
    yaw = pose_bucket(estimate_pose(s))[0]
    return {-1: "left", 0: "frontal", 1: "right"}.get(yaw, f"yaw{yaw:+d}")


class _Identity:
    def __init__(self, rng: np.random.Generator, idx: int, counts: FixtureCounts):
        self.id = f"id_{idx:03d}"
        c = rng.normal(size=counts.embedding_dim)
        self.centre = c / np.linalg.norm(c)
        self.shape = random_shape(rng)
        self.template = rng.uniform(0.0, 1.0, size=(3, 32, 32))
        # identity-level labels tied to the embedding so that near neighbours tend to share them
        self.attributes = {
            "gender": "f" if self.centre[0] > 0 else "m",
            "age": "young" if self.centre[1] > 0 else "old",
        }

    def embedding(self, rng, counts: FixtureCounts) -> np.ndarray:
        e = self.centre + rng.normal(0.0, counts.cluster_noise / np.sqrt(counts.embedding_dim),
                                     counts.embedding_dim)
        return e / np.linalg.norm(e)

    def landmarks(self, rng) -> tuple[LandmarkSet, tuple[float, float, float]]:
        pose = (float(rng.choice(YAW_CENTRES) + rng.uniform(-1, 1)),
                float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
        open_ = float(rng.choice([0.0, rng.uniform(0.06, 0.15)]))
        params = FaceParams(
            shape=self.shape,
            mouth_open=open_, yaw=pose[0], pitch=pose[1], roll=pose[2],
            scale=float(rng.uniform(70, 90)),
            center=(float(rng.uniform(120, 136)), float(rng.uniform(120, 136))),
        )
        return synth_landmarks(params), pose

    def image(self, rng) -> np.ndarray:
        return np.clip(self.template + rng.normal(0.0, 0.1, self.template.shape), 0.0, 1.0)


def prototype_head(net: MiniNet, class_images, rng: np.random.Generator) -> MiniNet:
    """Nearest-class-mean head: row c is the mean identity feature of class c's images.

    Classes without images get small random rows so they never dominate the
    ranking. The convolutional layers are left untouched.
    """
    w = rng.uniform(0.0, 0.01, size=net.head_w.shape)
    for c, imgs in enumerate(class_images):
        w[c] = np.mean([identity_feature(activations(net, im)) for im in imgs], axis=0)
    return net.with_head(head_w=w, head_b=np.zeros(net.n_classes))


def make_fixtures(out_dir, seed: int = 0, counts: FixtureCounts = FixtureCounts()) -> dict:
    """Write a complete fixture set under ``out_dir``; returns a summary dict."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    people = [_Identity(rng, i, counts) for i in range(counts.identities)]

    gallery = []
    for p in people:
        for n in range(counts.per_identity):
            lm, pose = p.landmarks(rng)
            gallery.append(GalleryItem(
                id=p.id, embedding=p.embedding(rng, counts), landmarks=lm, pose=pose,
                meta={"item": f"{p.id}/{n}", "attributes": {**p.attributes, "expression": expression_label(lm)}},
            ))

    records = []
    for r in range(counts.records):
        p = people[int(rng.integers(len(people)))]
        lm, pose = p.landmarks(rng)
        name = f"rec_{r:03d}"
        tensor.save(out / "images" / f"{name}.adt", p.image(rng))
        records.append({
            "id": name,
            "source_id": p.id,
            "image": f"images/{name}.adt",
            "embedding": [float(v) for v in p.embedding(rng, counts)],
            "landmarks": lm.to_list(),
            "pose": list(pose),
            "attributes": {**p.attributes, "expression": expression_label(lm), "pose": pose_label(lm)},
        })

    net = MiniNet.random(seed, n_classes=max(16, counts.identities))
    train = [[p.image(rng) for _ in range(4)] for p in people]
    net = prototype_head(net, train, rng)
    net.save(out / "net")
    write_gallery(out / "gallery.jsonl", gallery)
    write_jsonl(out / "records.jsonl", records)
    summary = {"seed": seed, "counts": asdict(counts), "image_size": list(IMAGE_SIZE),
               "gallery_items": len(gallery), "records": len(records),
               "class_ids": [p.id for p in people]}
    atomic_write_text(out / "fixtures.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
