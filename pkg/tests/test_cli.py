"""Command-line pipeline: prepare, embed-text, train, eval, retrieve, plot."""

import json
from pathlib import Path

import numpy as np
import pytest

import oracles
from sherrylab.cli import main
from sherrylab.datamodel import (Domain, Sample, Split, SplitManifest,
                                 load_manifest, save_manifest)
from sherrylab.trainer import Checkpoint, TrainConfig, save_checkpoint, toy_student


def run(capsys, *argv):
    code = main(list(argv))
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.strip()]
    return code, json.loads(lines[-1]) if lines else None


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A small prepared-and-trained toy workspace shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli-ws")
    data = root / "data"
    assert main(["prepare", "--toy", "--out", str(data),
                 "--set", "toy.num_seen=4", "--set", "toy.num_unseen=2",
                 "--set", "toy.per_class_per_domain=6",
                 "--set", "toy.feature_dim=10"]) == 0
    ckpt = root / "ckpt"
    assert main(["train", "--manifest", str(data / "manifest.json"),
                 "--bank", str(data / "bank-seen.json"), "--out", str(ckpt),
                 "--set", "epochs=3", "--set", "batch_size=16",
                 "--set", "learning_rate=0.01"]) == 0
    return {"data": data, "ckpt": ckpt,
            "manifest": data / "manifest.json",
            "bank_seen": data / "bank-seen.json",
            "bank_unseen": data / "bank-unseen.json"}


# ---------------------------------------------------------------------------
# prepare

def test_prepare_toy_reports_counts(tmp_path, capsys):
    code, out = run(capsys, "prepare", "--toy", "--out", str(tmp_path),
                    "--set", "toy.num_seen=4", "--set", "toy.num_unseen=2",
                    "--set", "toy.per_class_per_domain=3",
                    "--set", "toy.feature_dim=8")
    assert code == 0
    assert out["seen_classes"] == 4 and out["unseen_classes"] == 2
    assert out["train_samples"] == 4 * 3 * 2
    assert out["test_samples"] == 2 * 3 * 2
    assert (tmp_path / "manifest.json").is_file()
    assert (tmp_path / "bank-seen.json").is_file()
    assert (tmp_path / "bank-unseen.json").is_file()
    manifest = load_manifest(tmp_path / "manifest.json")
    assert len(manifest.train_samples) == 24


def test_prepare_without_source_fails(tmp_path, capsys):
    code, out = run(capsys, "prepare", "--out", str(tmp_path))
    assert code == 1
    assert out["error"]["type"] == "InvalidSpec"


def test_prepare_ingests_image_tree(img_world, tmp_path, capsys):
    # class-list overrides sidestep the template's class-count contract
    code, out = run(capsys, "prepare", "--root", str(img_world["root"]),
                    "--template", "quickdraw",
                    "--seen", ",".join(img_world["seen"]),
                    "--unseen", ",".join(img_world["unseen"]),
                    "--out", str(tmp_path))
    assert code == 0
    assert out["seen_classes"] == len(img_world["seen"])
    assert out["unseen_classes"] == len(img_world["unseen"])
    manifest = load_manifest(tmp_path / "manifest.json", check_files=False)
    assert manifest.seen_classes == sorted(img_world["seen"])


# ---------------------------------------------------------------------------
# embed-text

def test_embed_text_uses_env_cache_and_is_byte_stable(ws, tmp_path,
                                                      monkeypatch, capsys):
    cache = tmp_path / "cache"
    monkeypatch.setenv("SHERRYLAB_CACHE", str(cache))
    code, out = run(capsys, "embed-text", "--manifest", str(ws["manifest"]),
                    "--split", "seen", "--provider", "stub", "--dim", "12")
    assert code == 0
    path = Path(out["cache"])
    assert path.parent == cache and path.name.startswith("stub-")
    first = path.read_bytes()
    code, out2 = run(capsys, "embed-text", "--manifest", str(ws["manifest"]),
                     "--split", "seen", "--provider", "stub", "--dim", "12")
    assert code == 0 and Path(out2["cache"]) == path
    assert path.read_bytes() == first
    assert out["classes"] == 4 and out["dim"] == 12


def test_embed_text_explicit_template_and_out(ws, tmp_path, capsys):
    dst = tmp_path / "bank.json"
    code, out = run(capsys, "embed-text", "--manifest", str(ws["manifest"]),
                    "--split", "all", "--provider", "stub", "--dim", "9",
                    "--template", "a sketch of [class]", "--out", str(dst))
    assert code == 0
    assert out["classes"] == 6
    assert out["templates"] == ["a sketch of [class]"]
    doc = json.loads(dst.read_text())
    assert len(doc["classes"]) == 6


def test_embed_text_import_file(tmp_path, capsys):
    src = tmp_path / "ext.json"
    src.write_text(json.dumps(
        {"encoder": "ext",
         "classes": [{"name": "a", "vector": [2.0, 0.0]},
                     {"name": "b", "vector": [0.0, 1.0]}]}))
    dst = tmp_path / "canon.json"
    code, out = run(capsys, "embed-text", "--import-file", str(src),
                    "--out", str(dst))
    assert code == 0 and out["classes"] == 2
    assert dst.is_file()


# ---------------------------------------------------------------------------
# train / eval

def test_train_reports_final_curve_record(ws):
    curve_path = ws["ckpt"] / "curve.jsonl"
    records = [json.loads(ln) for ln in
               curve_path.read_text().splitlines() if ln.strip()]
    assert len(records) == 3
    assert records[-1]["L_align"] < records[0]["L_align"]
    assert (ws["ckpt"] / "config.json").is_file()
    assert (ws["ckpt"] / "params" / "index.json").is_file()


def test_eval_writes_report(ws, tmp_path, capsys):
    code, out = run(capsys, "eval", "--checkpoint", str(ws["ckpt"]),
                    "--manifest", str(ws["manifest"]),
                    "--ks", "1,5", "--out", str(tmp_path))
    assert code == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["map_all"] == pytest.approx(out["map_all"])
    assert set(doc["map_at"]) == {"1", "5"}
    assert out["num_queries"] == 2 * 6


def test_eval_matches_hand_oracle(tmp_path, capsys):
    # hand-built world: identity encoder, so features are the raw vectors
    gvecs = np.array([[1.0, 0.1, 0.0], [0.9, 0.2, 0.1], [0.0, 1.0, 0.1],
                      [0.1, 0.9, 0.0], [0.0, 0.1, 1.0], [0.1, 0.0, 0.9]])
    glabels = ["cat", "cat", "dog", "dog", "owl", "owl"]
    qvecs = np.array([[1.0, 0.0, 0.2], [0.2, 1.0, 0.0], [0.0, 0.2, 1.0]])
    qlabels = ["cat", "dog", "owl"]
    train = [Sample(id=f"t{i}", domain=d, class_name=c, split=Split.TRAIN,
                    image=np.full((1, 1, 3), 0.5))
             for i, (c, d) in enumerate([("apple", Domain.PHOTO),
                                         ("apple", Domain.SKETCH),
                                         ("pear", Domain.PHOTO),
                                         ("pear", Domain.SKETCH)])]
    test = [Sample(id=f"p{i}", domain=Domain.PHOTO, class_name=glabels[i],
                   split=Split.TEST, image=gvecs[i].reshape(1, 1, 3))
            for i in range(6)]
    test += [Sample(id=f"s{i}", domain=Domain.SKETCH, class_name=qlabels[i],
                    split=Split.TEST, image=qvecs[i].reshape(1, 1, 3))
             for i in range(3)]
    manifest = SplitManifest(name="hand", seen_classes=["apple", "pear"],
                             unseen_classes=["cat", "dog", "owl"],
                             train_samples=train, test_samples=test,
                             metadata={})
    mpath = tmp_path / "world" / "manifest.json"
    save_manifest(manifest, mpath, write_samples=True)
    ck = Checkpoint(encoder=toy_student(manifest, seed=0),
                    config=TrainConfig(), bank_ref="", curve=[])
    save_checkpoint(ck, tmp_path / "ck")

    out_dir = tmp_path / "eval"
    code, out = run(capsys, "eval", "--checkpoint", str(tmp_path / "ck"),
                    "--manifest", str(mpath), "--ks", "1,2,4",
                    "--out", str(out_dir))
    assert code == 0
    loaded = load_manifest(mpath)
    photos = [s for s in loaded.test_samples if s.domain is Domain.PHOTO]
    sketches = [s for s in loaded.test_samples if s.domain is Domain.SKETCH]
    want = oracles.evaluate(
        [s.id for s in sketches], [s.class_name for s in sketches],
        np.stack([s.image.reshape(-1) for s in sketches]),
        [s.id for s in photos], [s.class_name for s in photos],
        np.stack([s.image.reshape(-1) for s in photos]), ks=(1, 2, 4))
    doc = json.loads((out_dir / "report.json").read_text())
    assert abs(doc["map_all"] - want["map_all"]) <= 1e-12
    for k in (1, 2, 4):
        assert abs(doc["map_at"][str(k)] - want["map_at"][k]) <= 1e-12
        assert abs(doc["prec_at"][str(k)] - want["prec_at"][k]) <= 1e-12


def test_sbsr_command(ws, tmp_path, capsys):
    code, out = run(capsys, "sbsr", "--checkpoint", str(ws["ckpt"]),
                    "--manifest", str(ws["manifest"]),
                    "--queries-per-class", "2", "--ks", "1,3",
                    "--out", str(tmp_path), "--seed", "3")
    assert code == 0
    doc = json.loads((tmp_path / "sbsr_report.json").read_text())
    assert doc["num_queries"] == 2 * 2
    assert 0.0 <= doc["map_all"] <= 1.0


# ---------------------------------------------------------------------------
# features / retrieve

def test_features_then_retrieve_on_pngs(img_world, tmp_path, capsys):
    feats_dir = tmp_path / "feats"
    code, out = run(capsys, "features", "--checkpoint",
                    str(img_world["ckpt_dir"]), "--manifest",
                    str(img_world["manifest_path"]), "--domain", "photo",
                    "--split", "test", "--out", str(feats_dir))
    assert code == 0
    findex = feats_dir / "features-test-photo"
    assert out["features"] == str(findex) and findex.is_dir()
    assert out["items"] == img_world["gallery"].size

    query = sorted(img_world["queries_dir"].iterdir())[0]
    rdir = tmp_path / "ret"
    code, out = run(capsys, "retrieve", "--checkpoint",
                    str(img_world["ckpt_dir"]), "--features", str(findex),
                    "--query", str(query), "--k", "5", "--out", str(rdir))
    assert code == 0
    doc = json.loads((rdir / "retrieve.json").read_text())
    assert doc["k"] == 5 and len(doc["results"]) == 5
    scores = [r["score"] for r in doc["results"]]
    assert scores == sorted(scores, reverse=True)
    assert out["top"] == doc["results"][0]["id"]
    # k larger than the gallery clamps
    code, out = run(capsys, "retrieve", "--checkpoint",
                    str(img_world["ckpt_dir"]), "--features", str(findex),
                    "--query", str(query), "--k", "999", "--out", str(rdir))
    assert code == 0
    doc = json.loads((rdir / "retrieve.json").read_text())
    assert doc["k"] == img_world["gallery"].size


# ---------------------------------------------------------------------------
# plot

def test_plot_tsne_artifacts_are_deterministic(ws, tmp_path, capsys):
    outs = []
    for sub in ("a", "b"):
        out_dir = tmp_path / sub
        code, out = run(capsys, "plot", "tsne", "--checkpoint",
                        str(ws["ckpt"]), "--manifest", str(ws["manifest"]),
                        "--classes", "2", "--per-class", "3",
                        "--out", str(out_dir))
        assert code == 0
        assert out["points"] == 2 * 3 * 2
        assert (out_dir / "tsne.png").is_file()
        outs.append((out_dir / "tsne.csv").read_bytes())
    assert outs[0] == outs[1]


def test_plot_heatmap(ws, tmp_path, capsys):
    code, out = run(capsys, "plot", "heatmap", "--checkpoint",
                    str(ws["ckpt"]), "--manifest", str(ws["manifest"]),
                    "--bank", str(ws["bank_unseen"]), "--split", "test",
                    "--per-class", "2", "--out", str(tmp_path))
    assert code == 0
    assert out["rows"] == 2
    assert out["columns"] == 2 * 2 * 2  # classes x per-class x domains
    assert (tmp_path / "heatmap.csv").is_file()
    assert (tmp_path / "heatmap.png").is_file()


def test_plot_adapter_scaling(ws, tmp_path, capsys):
    code, out = run(capsys, "plot", "adapter-scaling", "--checkpoint",
                    str(ws["ckpt"]), "--manifest", str(ws["manifest"]),
                    "--bank", str(ws["bank_seen"]), "--counts", "0,1",
                    "--set", "epochs=1", "--set", "batch_size=16",
                    "--set", "learning_rate=0.01", "--out", str(tmp_path))
    assert code == 0
    assert out["runs"] == 2
    rows = (tmp_path / "adapter_scaling.csv").read_text().splitlines()
    assert len(rows) == 3  # header + one per count


# ---------------------------------------------------------------------------
# error handling

def test_usage_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["prepare"])  # missing required --out
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["plot", "sculpture", "--manifest", "m", "--out", "o"])
    assert exc.value.code == 2


def test_module_errors_return_one_with_payload(tmp_path, capsys):
    code, out = run(capsys, "eval", "--checkpoint", str(tmp_path / "nope"),
                    "--manifest", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path))
    assert code == 1
    assert set(out["error"]) == {"type", "message"}

    bad_cfg = tmp_path / "cfg.json"
    bad_cfg.write_text("[1, 2, 3]")
    code, out = run(capsys, "prepare", "--toy", "--config", str(bad_cfg),
                    "--out", str(tmp_path))
    assert code == 1 and out["error"]["type"] == "InvalidSpec"

    code, out = run(capsys, "prepare", "--toy", "--set", "oops",
                    "--out", str(tmp_path))
    assert code == 1 and out["error"]["type"] == "InvalidSpec"

    code, out = run(capsys, "prepare", "--toy", "--set",
                    "toy.num_seen=\"many\"", "--out", str(tmp_path))
    assert code == 1
