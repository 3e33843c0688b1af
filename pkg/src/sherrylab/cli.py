"""Command-line surface: dataset preparation, offline text embedding,
training, evaluation, single-query retrieval, figure emission, serving.

Configs are one JSON document mirroring the training config field names;
``--set key=value`` (dotted keys, JSON-typed values) overrides any entry.
Usage errors exit with status 2; module errors print one machine-readable
JSON line ``{"error": {"type", "message"}}`` and exit 1. Artifacts are
byte-stable given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import backbone, serve, trainer
from .datamodel import (Domain, ToySpec, generate_toy_dataset, ingest_directory,
                        list_templates, load_manifest, load_template,
                        save_manifest)
from .errors import InvalidSpec, SherryError
from .retrieval import (extract_index, load_index, rank, save_index,
                        save_report, zero_shot_evaluate, zs_sbsr_evaluate)
from .textbank import (KNOWN_ENCODER_DIMS, PromptTemplate, StubTextProvider,
                       bank_from_prototypes, embed_classes,
                       import_external_bank, load_bank, save_bank,
                       templates_for_mode)
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

CACHE_ENV = "SHERRYLAB_CACHE"


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _load_config(path: str | None, sets: list[str] | None) -> dict:
    doc: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise InvalidSpec(f"{path}: config must be a JSON object")
    for kv in sets or []:
        key, eq, raw = kv.partition("=")
        if not eq or not key:
            raise InvalidSpec(f"--set expects key=value, got '{kv}'")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = node[p] = {}
            node = nxt
        node[parts[-1]] = value
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _student_for_training(config: dict, manifest, seed: int):
    """Starting encoder: the config's "encoder" section, or the toy default."""
    enc_cfg = config.get("encoder")
    if not enc_cfg:
        return trainer.toy_student(manifest, seed)
    base = trainer.default_encoder_spec(manifest)
    family = backbone.Family(enc_cfg.get("family", base.family.value))
    input_size = tuple(int(v) for v in enc_cfg.get("input_size", base.input_size))
    if "widths" in enc_cfg:
        widths = tuple(int(v) for v in enc_cfg["widths"])
    elif family is backbone.Family.IDENTITY:
        widths = (input_size[0] * input_size[1] * input_size[2],)
    else:
        widths = base.widths
    spec = backbone.EncoderSpec(
        family=family, num_blocks=len(widths), widths=widths,
        input_size=input_size,
        source_classes=int(enc_cfg.get("source_classes", base.source_classes)))
    return backbone.build_encoder(
        spec, seed=seed,
        retrieval_dim=enc_cfg.get("retrieval_dim"),
        head_hidden=enc_cfg.get("head_hidden"),
        head_init=str(enc_cfg.get("head_init", "random")))


# --------------------------------------------------------------------------
# Commands

def cmd_prepare(args) -> int:
    out = _out_dir(args)
    config = _load_config(args.config, args.set)
    if args.toy:
        toy_cfg = dict(config.get("toy", {}))
        if args.seed is not None:
            toy_cfg["seed"] = args.seed
        spec = ToySpec(**toy_cfg)
        manifest, prototypes = generate_toy_dataset(spec)
        save_manifest(manifest, out / "manifest.json", write_samples=True)
        save_bank(bank_from_prototypes(prototypes, manifest.seen_classes),
                  out / "bank-seen.json")
        save_bank(bank_from_prototypes(prototypes, manifest.unseen_classes),
                  out / "bank-unseen.json")
    else:
        if not args.root or not args.template:
            raise InvalidSpec(
                f"prepare needs --toy, or --root with --template "
                f"(available: {list_templates()})")
        template = load_template(args.template)
        seen = args.seen.split(",") if args.seen else None
        unseen = args.unseen.split(",") if args.unseen else None
        manifest = ingest_directory(args.root, template, seen, unseen)
        save_manifest(manifest, out / "manifest.json")
    _emit({"manifest": str(out / "manifest.json"),
           "seen_classes": len(manifest.seen_classes),
           "unseen_classes": len(manifest.unseen_classes),
           "train_samples": len(manifest.train_samples),
           "test_samples": len(manifest.test_samples)})
    return 0


def _bank_classes(manifest, which: str) -> list[str]:
    if which == "seen":
        return list(manifest.seen_classes)
    if which == "unseen":
        return list(manifest.unseen_classes)
    return list(manifest.seen_classes) + list(manifest.unseen_classes)


def cmd_embed_text(args) -> int:
    if args.import_file:
        dst = Path(args.out or Path(args.import_file).with_suffix(".cache.json"))
        bank = import_external_bank(args.import_file, dst)
        _emit({"cache": str(dst), "classes": len(bank.class_names),
               "dim": bank.dim})
        return 0
    manifest = load_manifest(args.manifest, check_files=False)
    classes = _bank_classes(manifest, args.split)
    provider = StubTextProvider(args.provider, dim=args.dim)
    if args.template:
        templates = [PromptTemplate(args.template)]
        mode = "single"
    else:
        templates = templates_for_mode(args.mode)
        mode = "ensemble" if len(templates) > 1 else "single"
    if args.out:
        dst = Path(args.out)
    else:
        cache_root = Path(os.environ.get(CACHE_ENV, "sherrylab-cache"))
        key = hashlib.sha256(json.dumps(
            [provider.name, provider.dim, [t.pattern for t in templates],
             classes], sort_keys=True).encode()).hexdigest()[:12]
        dst = cache_root / f"{provider.name.replace('/', '_')}-{key}.json"
    bank = embed_classes(provider, templates, classes, mode=mode)
    save_bank(bank, dst)
    _emit({"cache": str(dst), "classes": len(classes), "dim": bank.dim,
           "templates": [t.pattern for t in templates]})
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    config = _load_config(args.config, args.set)
    if args.seed is not None:
        config["seed"] = args.seed
    cfg = TrainConfig.from_dict(config)
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.bank) if args.bank else None
    student = _student_for_training(config, manifest, cfg.seed)
    ckpt = train(cfg, manifest, bank, pretrained=student)
    save_checkpoint(ckpt, out)
    _emit({"checkpoint": str(out), "epochs": cfg.epochs,
           "final": ckpt.curve[-1]})
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else [100, 200]
    report = zero_shot_evaluate(ckpt.encoder, manifest, ks=ks,
                                denominator=args.denominator)
    save_report(report, out / "report.json")
    _emit({"report": str(out / "report.json"), "map_all": report.map_all,
           "num_queries": report.num_queries,
           "excluded_queries": report.excluded_queries})
    return 0


def cmd_sbsr(args) -> int:
    out = _out_dir(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    sketches = [s for s in manifest.test_samples if s.domain is Domain.SKETCH]
    index = extract_index(ckpt.encoder, sketches)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else [100, 200]
    report = zs_sbsr_evaluate(index, args.queries_per_class,
                              seed=args.seed if args.seed is not None else 0,
                              ks=ks)
    save_report(report, out / "sbsr_report.json")
    _emit({"report": str(out / "sbsr_report.json"), "map_all": report.map_all,
           "num_queries": report.num_queries})
    return 0


def cmd_features(args) -> int:
    out = _out_dir(args)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    domain = Domain(args.domain)
    pool = manifest.test_samples if args.split == "test" else manifest.train_samples
    samples = [s for s in pool if s.domain is domain]
    index = extract_index(ckpt.encoder, samples)
    save_index(index, out / f"features-{args.split}-{domain.value}")
    _emit({"features": str(out / f"features-{args.split}-{domain.value}"),
           "items": index.size})
    return 0


def cmd_retrieve(args) -> int:
    out = _out_dir(args)
    ckpt = load_checkpoint(args.checkpoint)
    student = ckpt.encoder
    if not student.frozen:
        student = student.snapshot()
    gallery = load_index(args.features)
    query_path = Path(args.query)
    data = query_path.read_bytes()
    arr = serve.preprocess_png(data, student.spec.input_size)
    feats, _ = backbone.forward(student, arr[None])
    k = max(1, min(args.k, gallery.size))
    label_of = dict(zip(gallery.ids, gallery.labels))
    results = [{"id": rid, "class": label_of[rid], "score": score}
               for rid, score in rank(feats[0], gallery)[:k]]
    doc = {"query": str(query_path), "k": k, "results": results}
    with open(out / "retrieve.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _emit({"output": str(out / "retrieve.json"), "k": k,
           "top": results[0]["id"] if results else None})
    return 0


def cmd_plot(args) -> int:
    from . import plots

    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    if args.kind == "tsne":
        ckpt = load_checkpoint(args.checkpoint)
        manifest = load_manifest(args.manifest)
        points = plots.plot_tsne(ckpt.encoder, manifest, args.classes,
                                 args.per_class, seed, out)
        _emit({"csv": str(out / "tsne.csv"), "image": str(out / "tsne.png"),
               "points": len(points)})
    elif args.kind == "heatmap":
        ckpt = load_checkpoint(args.checkpoint)
        manifest = load_manifest(args.manifest)
        bank = load_bank(args.bank)
        matrix = plots.plot_heatmap(ckpt.encoder, manifest, bank, out,
                                    per_class=args.per_class, seed=seed,
                                    split=args.split)
        _emit({"csv": str(out / "heatmap.csv"),
               "image": str(out / "heatmap.png"),
               "rows": matrix.shape[0], "columns": matrix.shape[1]})
    else:  # adapter-scaling
        config = _load_config(args.config, args.set)
        if args.seed is not None:
            config["seed"] = args.seed
        cfg = TrainConfig.from_dict(config)
        manifest = load_manifest(args.manifest)
        bank = load_bank(args.bank) if args.bank else None
        counts = [int(c) for c in args.counts.split(",")]
        rows = plots.plot_adapter_scaling(
            counts, cfg, manifest, bank, out,
            student_factory=lambda: _student_for_training(config, manifest,
                                                          cfg.seed))
        _emit({"csv": str(out / "adapter_scaling.csv"),
               "image": str(out / "adapter_scaling.png"),
               "runs": len(rows)})
    return 0


def cmd_serve(args) -> int:
    serve.start(args.checkpoint, args.features, port=args.port,
                host=args.host, manifest_path=args.manifest)
    return 0


# --------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sherrylab",
        description="Adapter-based zero-shot sketch-to-photo retrieval.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="K=V",
                       help="override a config entry (dotted keys)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("prepare", help="build a dataset manifest")
    common(p)
    p.add_argument("--toy", action="store_true",
                   help="generate the synthetic benchmark")
    p.add_argument("--root", help="dataset root with photo/ and sketch/ trees")
    p.add_argument("--template", help=f"benchmark template, one of "
                                      f"{list_templates()}")
    p.add_argument("--seen", help="comma-separated seen-class override")
    p.add_argument("--unseen", help="comma-separated unseen-class override")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("embed-text", help="build a text-embedding bank")
    common(p, out_required=False)
    p.add_argument("--provider", default="stub",
                   help=f"stub provider name; known dims: "
                        f"{sorted(KNOWN_ENCODER_DIMS)}")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--manifest")
    p.add_argument("--split", choices=["seen", "unseen", "all"], default="seen")
    p.add_argument("--mode", default="a_photo_of_class",
                   choices=["a_class", "a_photo_of_class", "ensemble"])
    p.add_argument("--template", help="explicit single template pattern")
    p.add_argument("--import-file", help="re-emit an external embedding file")
    p.set_defaults(func=cmd_embed_text)

    p = sub.add_parser("train", help="train the student model")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="zero-shot sketch-to-photo evaluation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ks", help="comma-separated k values (default 100,200)")
    p.add_argument("--denominator", choices=["min", "relevant"], default="min")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sbsr", help="sketch-to-sketch evaluation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--queries-per-class", type=int, default=1)
    p.add_argument("--ks")
    p.set_defaults(func=cmd_sbsr)

    p = sub.add_parser("features", help="extract a gallery feature index")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--domain", choices=["photo", "sketch"], default="photo")
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("retrieve", help="rank a gallery for one query image")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True,
                   help="feature index archive directory")
    p.add_argument("--query", required=True, help="query image file")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("plot", help="emit figures with numeric artifacts")
    p.add_argument("kind", choices=["tsne", "heatmap", "adapter-scaling"])
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bank")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--counts", default="0,1",
                   help="comma-separated adapter counts for the sweep")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("serve", help="run the retrieval HTTP service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SherryError as exc:
        _emit({"error": exc.payload()})
        return 1
    except (OSError, json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        _emit({"error": {"type": type(exc).__name__, "message": str(exc)}})
        return 1


if __name__ == "__main__":
    sys.exit(main())
