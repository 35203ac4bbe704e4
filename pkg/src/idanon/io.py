"""JSON-lines readers and writers for galleries, pipeline inputs and eval records.

Gallery line::

    {"id": str, "embedding": [f32, ...], "landmarks": [[x, y] * 68]?, "pose": [yaw, pitch, roll]?, ...}

Unknown keys are kept in ``GalleryItem.meta``.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .evaluation import EvalRecord
from .ipd import GalleryItem
from .landmarks import LandmarkSet

_GALLERY_KEYS = {"id", "embedding", "landmarks", "pose"}


def read_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: {exc}") from None


def write_jsonl(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def item_from_dict(d: dict) -> GalleryItem:
    lm = d.get("landmarks")
    pose = d.get("pose")
    return GalleryItem(
        id=str(d["id"]),
        embedding=np.asarray(d["embedding"], dtype=np.float32),
        landmarks=LandmarkSet(lm) if lm is not None else None,
        pose=tuple(float(v) for v in pose) if pose is not None else None,
        meta={k: v for k, v in d.items() if k not in _GALLERY_KEYS},
    )


def item_to_dict(item: GalleryItem) -> dict:
    d = {"id": item.id, "embedding": [float(v) for v in item.embedding]}
    if item.landmarks is not None:
        d["landmarks"] = item.landmarks.to_list()
    if item.pose is not None:
        d["pose"] = list(item.pose)
    d.update(item.meta)
    return d


def read_gallery(path) -> list[GalleryItem]:
    return [item_from_dict(d) for d in read_jsonl(path)]


def write_gallery(path, items: Iterable[GalleryItem]) -> None:
    write_jsonl(path, (item_to_dict(g) for g in items))


def record_from_dict(d: dict) -> EvalRecord:
    return EvalRecord(
        source_id=str(d["source_id"]),
        original=d["original"],
        anonymized=d["anonymized"],
        attributes_original=d.get("attributes_original", {}),
        attributes_anonymized=d.get("attributes_anonymized", {}),
    )


def record_to_dict(r: EvalRecord) -> dict:
    return {
        "source_id": r.source_id,
        "original": [float(v) for v in r.original],
        "anonymized": [float(v) for v in r.anonymized],
        "attributes_original": dict(r.attributes_original),
        "attributes_anonymized": dict(r.attributes_anonymized),
    }


def read_eval_records(path) -> list[EvalRecord]:
    return [record_from_dict(d) for d in read_jsonl(path)]


def write_eval_records(path, records: Iterable[EvalRecord]) -> None:
    write_jsonl(path, (record_to_dict(r) for r in records))
