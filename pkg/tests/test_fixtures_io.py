import filecmp
import json

import numpy as np
import pytest

from idanon.classifier import MiniNet, forward
from idanon.evaluation import EvalRecord
from idanon.fixtures import FixtureCounts, make_fixtures
from idanon.io import (
    item_from_dict,
    item_to_dict,
    read_eval_records,
    read_gallery,
    read_jsonl,
    write_eval_records,
    write_jsonl,
)
from idanon.ipd import GalleryItem
from idanon.landmarks import LandmarkSet, mouth_opening


def test_fixed_seed_gives_identical_files(tmp_path):
    make_fixtures(tmp_path / "a", seed=5)
    make_fixtures(tmp_path / "b", seed=5)
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("net", "images"):
        c = filecmp.dircmp(tmp_path / "a" / sub, tmp_path / "b" / sub)
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub, c.common_files,
                                               shallow=False)
        assert not mismatch and not errors


def test_different_seed_differs(tmp_path):
    make_fixtures(tmp_path / "a", seed=1)
    make_fixtures(tmp_path / "b", seed=2)
    assert (tmp_path / "a" / "gallery.jsonl").read_bytes() != (tmp_path / "b" / "gallery.jsonl").read_bytes()


def test_counts_validated():
    with pytest.raises(ValueError):
        FixtureCounts(records=0)
    with pytest.raises(ValueError):
        FixtureCounts(identities=1)


def test_landmarks_satisfy_invariants(fixture_dir):
    gallery = read_gallery(fixture_dir / "gallery.jsonl")
    assert len(gallery) == 72
    for g in gallery:
        assert isinstance(g.landmarks, LandmarkSet)
        assert mouth_opening(g.landmarks) >= 0
        assert np.all((g.landmarks.points > 0) & (g.landmarks.points < 256))
    for r in read_jsonl(fixture_dir / "records.jsonl"):
        LandmarkSet(r["landmarks"], bounds=(256, 256))


def test_identity_clusters_separable(fixture_dir):
    gallery = read_gallery(fixture_dir / "gallery.jsonl")
    ids = np.array([g.id for g in gallery])
    emb = np.stack([g.embedding for g in gallery]).astype(np.float64)
    d = np.linalg.norm(emb[:, None] - emb[None], axis=2)
    same = ids[:, None] == ids[None]
    off_diag = ~np.eye(len(ids), dtype=bool)
    intra, inter = d[same & off_diag].mean(), d[~same].mean()
    assert intra < inter
    # the per-identity radius is controlled: the farthest same-id pair is nearer than the closest other-id pair
    assert d[same & off_diag].max() < d[~same].min()


def test_top1_importance_aligned_with_identity_feature(fixture_dir):
    """The class-mean head makes alpha of the top class point along f, which is what IFA then removes.

    The random conv stack maps every identity to nearly the same direction, so
    this head is not an accurate identity classifier; only the alignment is asserted.
    """
    from idanon import tensor
    from idanon.cam import neuron_importance
    from idanon.classifier import identity_feature

    net = MiniNet.load(fixture_dir / "net")
    summary = json.loads((fixture_dir / "fixtures.json").read_text())
    assert net.n_classes >= len(summary["class_ids"])
    for r in read_jsonl(fixture_dir / "records.jsonl"):
        a, p = forward(net, tensor.load(fixture_dir / r["image"]))
        f, alpha = identity_feature(a), neuron_importance(net, a, p.ranking[0])
        assert f @ alpha / (np.linalg.norm(f) * np.linalg.norm(alpha)) > 0.99


def test_gallery_item_roundtrip():
    rng = np.random.default_rng(0)
    item = GalleryItem("x", rng.normal(size=3), pose=(1.0, 2.0, 3.0), meta={"attributes": {"age": "old"}})
    d = item_to_dict(item)
    back = item_from_dict(json.loads(json.dumps(d)))
    assert back.id == "x" and back.pose == (1.0, 2.0, 3.0) and back.meta == item.meta
    np.testing.assert_array_equal(back.embedding, item.embedding)


def test_jsonl_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"a": 1}\n\n{oops\n')
    with pytest.raises(ValueError, match=":3:"):
        list(read_jsonl(p))


def test_write_jsonl_is_sorted_and_atomic(tmp_path):
    p = tmp_path / "x.jsonl"
    write_jsonl(p, [{"b": 1, "a": 2}])
    assert p.read_text() == '{"a": 2, "b": 1}\n'
    assert [f.name for f in tmp_path.iterdir()] == ["x.jsonl"]


def test_eval_record_roundtrip(tmp_path):
    recs = [EvalRecord("a", [0.1, 0.2], [0.3, 0.4], {"g": "f"}, {"g": "m"})]
    write_eval_records(tmp_path / "e.jsonl", recs)
    back = read_eval_records(tmp_path / "e.jsonl")
    assert back[0].source_id == "a" and back[0].attributes_anonymized == {"g": "m"}
    np.testing.assert_array_equal(back[0].anonymized, [0.3, 0.4])
