"""Teacher-student training with a frozen text-feature classifier.

The teacher is a bit-identical frozen copy of the student's initial backbone
and source head; the student additionally carries zero-initialized adapters,
the retrieval head, and the alignment projector. Every step minimizes

    L = L_align(features vs text bank) + lam * L_distill(source logits vs teacher)

over the currently tunable parameter groups only. In CLASSICAL mode the
alignment term is replaced by plain cross-entropy through a trainable
classifier and no bank is consulted.

Determinism contract: (config, seed, manifest, bank) fully determine the
run, including data order and augmentation draws, so two identical runs
produce bit-identical loss curves and checkpoints.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import archive, backbone
from .adapter import TunabilityMode, count_parameters, insert_adapters, set_tunability
from .backbone import (EncoderSpec, EncoderState, attach_classifier,
                       attach_projector, attach_source_head, build_encoder,
                       load_encoder, save_encoder)
from .datamodel import Domain, SplitManifest, validate_manifest
from .errors import (BankMismatch, InvalidManifest, InvalidSpec,
                     ModeRequiresAdapters, TooFewSamples)
from .losses import (LossConfig, alignment_loss_grad, classification_loss_grad,
                     distillation_loss_grad, total_loss)
from .textbank import TextBank, classifier_matrix


class Optimizer(enum.Enum):
    ADAM = "adam"
    SGD = "sgd"


class PromptMode(enum.Enum):
    CLASSICAL = "classical"
    A_CLASS = "a_class"
    A_PHOTO_OF_CLASS = "a_photo_of_class"
    ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    optimizer: Optimizer = Optimizer.ADAM
    tunability: TunabilityMode = TunabilityMode.BACKBONE_ADAPTER
    adapter_count: int = 1
    adapter_ratio: float = 0.25
    prompt_mode: PromptMode = PromptMode.A_PHOTO_OF_CLASS
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    augmentation: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidSpec("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidSpec("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidSpec("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise InvalidSpec("weight_decay must be >= 0")
        if self.adapter_count < 0:
            raise InvalidSpec("adapter_count must be >= 0")
        self.loss.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["optimizer"] = self.optimizer.value
        d["tunability"] = self.tunability.value
        d["prompt_mode"] = self.prompt_mode.value
        d["loss"] = self.loss.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            epochs=int(d.get("epochs", 40)),
            batch_size=int(d.get("batch_size", 32)),
            learning_rate=float(d.get("learning_rate", 1e-4)),
            weight_decay=float(d.get("weight_decay", 5e-4)),
            optimizer=Optimizer(d.get("optimizer", "adam")),
            tunability=TunabilityMode(d.get("tunability", "backbone_adapter")),
            adapter_count=int(d.get("adapter_count", 1)),
            adapter_ratio=float(d.get("adapter_ratio", 0.25)),
            prompt_mode=PromptMode(d.get("prompt_mode", "a_photo_of_class")),
            loss=LossConfig(**d.get("loss", {})),
            seed=int(d.get("seed", 0)),
            augmentation=bool(d.get("augmentation", False)),
        )


@dataclass
class Checkpoint:
    encoder: EncoderState
    config: TrainConfig
    bank_ref: str
    curve: list[dict]
    metrics: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Model assembly

def init_teacher_student(pretrained, cfg: TrainConfig,
                         text_dim: int | None = None,
                         num_classes: int | None = None
                         ) -> tuple[EncoderState, EncoderState]:
    """Build the frozen teacher and the tunable student from one init.

    ``pretrained`` is an archive path, an EncoderSpec (seeded fresh init), or
    an already-built EncoderState. The teacher snapshot is taken before any
    adapter or projector exists, so its backbone and source head are
    bit-identical to the student's start; adapters are zero-initialized, so
    the two forward passes agree exactly until the first optimizer step.
    """
    cfg.validate()
    if isinstance(pretrained, (str, Path)):
        student = load_encoder(pretrained)
    elif isinstance(pretrained, EncoderSpec):
        student = build_encoder(pretrained, seed=cfg.seed)
    elif isinstance(pretrained, EncoderState):
        student = pretrained
    else:
        raise InvalidSpec(f"cannot initialize from {type(pretrained).__name__}")
    if student.frozen:
        raise InvalidSpec("student encoder is frozen")
    if not student.has_source_head:
        attach_source_head(student, seed=cfg.seed + 101)

    teacher = student.snapshot()

    if cfg.adapter_count > 0:
        insert_adapters(student, cfg.adapter_count, ratio=cfg.adapter_ratio,
                        seed=cfg.seed + 202)
    if cfg.prompt_mode is PromptMode.CLASSICAL:
        if num_classes is None:
            raise InvalidSpec("CLASSICAL mode needs the training class count")
        if "head/cls/W" not in student.params:
            attach_classifier(student, num_classes, seed=cfg.seed + 303)
    else:
        if text_dim is None:
            raise InvalidSpec("alignment needs the bank dimension")
        if "head/proj/W" not in student.params:
            attach_projector(student, text_dim, seed=cfg.seed + 404)
    set_tunability(student, cfg.tunability)
    return teacher, student


# --------------------------------------------------------------------------
# Optimizers: float64 math and moments, in-place float32 parameter writes
# (in place so adapter views of the same arrays stay coherent)

class _Opt:
    def __init__(self, cfg: TrainConfig, enc: EncoderState):
        self.cfg = cfg
        self.enc = enc
        self.t = 0
        if cfg.optimizer is Optimizer.ADAM:
            self.m = {n: np.zeros(enc.params[n].shape) for n in enc.trainable}
            self.v = {n: np.zeros(enc.params[n].shape) for n in enc.trainable}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        for name in sorted(self.enc.trainable):
            p = self.enc.params[name]
            p64 = p.astype(np.float64)
            g = np.asarray(grads[name], dtype=np.float64)
            if cfg.weight_decay:
                g = g + cfg.weight_decay * p64
            if cfg.optimizer is Optimizer.SGD:
                new = p64 - cfg.learning_rate * g
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
                v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
                mhat = m / (1 - b1 ** self.t)
                vhat = v / (1 - b2 ** self.t)
                new = p64 - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
            p[...] = new.astype(np.float32)


# --------------------------------------------------------------------------
# Batching

class _DomainStream:
    """Seeded shuffled index stream over one domain, wrapping across epochs."""

    def __init__(self, count: int, rng: np.random.Generator):
        self.count = count
        self.rng = rng
        self.order = rng.permutation(count)
        self.pos = 0

    def take(self, n: int) -> list[int]:
        out = []
        while len(out) < n:
            if self.pos >= self.count:
                self.order = self.rng.permutation(self.count)
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


def _augment(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Seeded horizontal flips, half the batch on average."""
    flips = rng.random(images.shape[0]) < 0.5
    out = images.copy()
    out[flips] = out[flips, :, ::-1, :]
    return out


# --------------------------------------------------------------------------
# Training loop

def train(cfg: TrainConfig, manifest: SplitManifest, bank: TextBank | None,
          pretrained=None) -> Checkpoint:
    """Run the full objective over the manifest's seen-class training split.

    The bank's class order must equal manifest.seen_classes (it provides the
    label space); CLASSICAL mode takes bank=None. ``pretrained`` defaults to
    a seeded toy-shaped encoder inferred from the manifest.
    """
    cfg.validate()
    problems = validate_manifest(manifest)
    if problems:
        raise InvalidManifest("; ".join(problems))

    classical = cfg.prompt_mode is PromptMode.CLASSICAL
    if classical:
        if bank is not None and bank.class_names != manifest.seen_classes:
            raise BankMismatch("bank classes do not match manifest seen classes")
        bank_matrix = None
    else:
        if bank is None:
            raise BankMismatch("alignment training requires a text bank")
        if bank.class_names != manifest.seen_classes:
            raise BankMismatch(
                "bank class order must equal the manifest's seen classes")
        bank_matrix = classifier_matrix(bank)

    if pretrained is None:
        pretrained = default_encoder_spec(manifest)
    teacher, student = init_teacher_student(
        pretrained, cfg,
        text_dim=None if classical else bank.dim,
        num_classes=len(manifest.seen_classes) if classical else None)

    label_of = {c: i for i, c in enumerate(manifest.seen_classes)}
    sketches = [s for s in manifest.train_samples if s.domain is Domain.SKETCH]
    photos = [s for s in manifest.train_samples if s.domain is Domain.PHOTO]
    if not sketches or not photos:
        raise TooFewSamples("training needs at least one sketch and one photo")

    n_sk = max(1, cfg.batch_size // 2)
    n_ph = max(1, cfg.batch_size - n_sk)
    steps_per_epoch = max(1, (len(sketches) + len(photos)) // (n_sk + n_ph))

    data_rng = np.random.default_rng([cfg.seed, 7])
    aug_rng = np.random.default_rng([cfg.seed, 11])
    sk_stream = _DomainStream(len(sketches), data_rng)
    ph_stream = _DomainStream(len(photos), data_rng)

    tunable = count_parameters(student)["tunable"]
    opt = _Opt(cfg, student)
    curve = []

    for epoch in range(cfg.epochs):
        e_align, e_distill, e_total = 0.0, 0.0, 0.0
        for _ in range(steps_per_epoch):
            batch_samples = ([sketches[i] for i in sk_stream.take(n_sk)]
                             + [photos[i] for i in ph_stream.take(n_ph)])
            images = np.stack([s.image for s in batch_samples])
            if cfg.augmentation:
                images = _augment(images, aug_rng)
            labels = np.array([label_of[s.class_name] for s in batch_samples])

            feats, src_logits, cache = backbone.forward_cached(student, images)
            t_logits = backbone.forward(teacher, images)[1]

            if classical:
                w = cache["p"]["head/cls/W"]
                b = cache["p"]["head/cls/b"]
                logits = feats @ w + b
                l_align, d_logits = classification_loss_grad(
                    logits, labels, cfg.loss.tau_cls)
                d_feats = d_logits @ w.T
                extra_grads = {"head/cls/W": feats.T @ d_logits,
                               "head/cls/b": d_logits.sum(axis=0)}
            else:
                l_align, d_feats, d_proj_w = alignment_loss_grad(
                    feats, cache["p"]["head/proj/W"], bank_matrix, labels,
                    cfg.loss.tau_align)
                extra_grads = {"head/proj/W": d_proj_w}

            l_distill, d_src = distillation_loss_grad(src_logits, t_logits)
            l_total = total_loss(l_align, l_distill, cfg.loss)

            grads = backbone.backward(
                student, cache, d_feats,
                None if cfg.loss.lam == 0 else cfg.loss.lam * d_src)
            grads.update(extra_grads)
            opt.step(grads)

            e_align += l_align
            e_distill += l_distill
            e_total += l_total
        curve.append({
            "epoch": epoch,
            "L_align": e_align / steps_per_epoch,
            "L_distill": e_distill / steps_per_epoch,
            "L_total": e_total / steps_per_epoch,
            "lr": cfg.learning_rate,
            "tunable_param_count": tunable,
        })

    bank_ref = "" if bank is None else f"{bank.encoder_name}:{bank.dim}"
    return Checkpoint(encoder=student, config=cfg, bank_ref=bank_ref,
                      curve=curve)


def default_encoder_spec(manifest: SplitManifest) -> EncoderSpec:
    """Toy-shaped identity encoder matching the manifest's record dim."""
    samples = manifest.train_samples or manifest.test_samples
    if not samples:
        raise InvalidManifest("manifest holds no samples")
    shape = samples[0].image.shape
    h, w, c = int(shape[0]), int(shape[1]), int(shape[2])
    return EncoderSpec(family=backbone.Family.IDENTITY, num_blocks=1,
                       widths=(h * w * c,), input_size=(h, w, c),
                       source_classes=max(2, len(manifest.seen_classes)))


def toy_student(manifest: SplitManifest, seed: int = 0) -> EncoderState:
    """Canonical starting point for toy pipelines: identity backbone with an
    identity head, so before any step the model scores the raw records and
    every later gain is attributable to training."""
    return build_encoder(default_encoder_spec(manifest), seed=seed,
                         head_init="identity")


# --------------------------------------------------------------------------
# Checkpoint directory layout:
#   params/                float32 parameter archive (index.json + .bin)
#   config.json            TrainConfig + bank reference
#   curve.jsonl            one record per epoch
#   metrics.json           optional evaluation snapshots

def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_encoder(ckpt.encoder, path / "params")
    doc = {"config": ckpt.config.to_dict(), "bank_ref": ckpt.bank_ref}
    with open(path / "config.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(path / "curve.jsonl", "w", encoding="utf-8") as fh:
        for rec in ckpt.curve:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if ckpt.metrics:
        with open(path / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(ckpt.metrics, fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    enc = load_encoder(path / "params")
    with open(path / "config.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = TrainConfig.from_dict(doc["config"])
    curve = []
    curve_path = path / "curve.jsonl"
    if curve_path.is_file():
        with open(curve_path, encoding="utf-8") as fh:
            curve = [json.loads(line) for line in fh if line.strip()]
    metrics = {}
    metrics_path = path / "metrics.json"
    if metrics_path.is_file():
        with open(metrics_path, encoding="utf-8") as fh:
            metrics = json.load(fh)
    return Checkpoint(encoder=enc, config=cfg,
                      bank_ref=str(doc.get("bank_ref", "")),
                      curve=curve, metrics=metrics)
