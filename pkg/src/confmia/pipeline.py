"""End-to-end orchestration: synth -> shadows -> score -> attack -> eval.

Every artifact is recorded in ``manifest.json`` under the output directory
with the hash of its upstream inputs (``key``) and of its own bytes
(``sha256``). A rerun reuses an artifact only when both still match.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields

from . import dataset as dset
from .attack import AttackVariant, load_result, run_attack, save_result
from .errors import ValidationError
from .evaluation import DEFAULT_FPRS, emit_report
from .model import Architecture, TrainConfig, load_model, save_model
from .rng import STREAM_MASK, derive_seed
from .scoring import ScoreVariant, load_scores, save_scores, score_matrix
from .shadows import (EnsembleConfig, build_mask, load_mask, load_predictions,
                      predict_matrix, save_mask, save_predictions, train_ensemble)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def _csv(value, cast=str):
    if isinstance(value, (list, tuple)):
        return tuple(cast(v) for v in value)
    return tuple(cast(v.strip()) for v in str(value).split(",") if v.strip())


@dataclass
class PipelineConfig:
    out_dir: str = "run"
    seed: int = 0
    dataset: str = ""
    classes: int = 10
    dim: int = 16
    per_class: int = 40
    spread: float = 1.0
    center_scale: float = 3.0
    models: int = 16
    epochs: int = 21
    hidden: tuple = (64,)
    activation: str = "relu"
    lr: float = 0.1
    batch: int = 32
    init_scale: float = 0.1
    scores: tuple = tuple(v.cli_name for v in ScoreVariant)
    attacks: tuple = tuple(v.cli_name for v in AttackVariant)
    fpr: tuple = DEFAULT_FPRS
    jobs: int = 1

    _LISTS = {"hidden": int, "scores": str, "attacks": str, "fpr": float}

    @classmethod
    def from_mapping(cls, values):
        """Build from string-valued settings (config file or CLI overrides)."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for raw_key, raw in values.items():
            key = raw_key.replace("-", "_")
            if key not in known:
                raise ValidationError(f"unknown config key {raw_key!r}")
            try:
                if key in cls._LISTS:
                    kwargs[key] = _csv(raw, cls._LISTS[key])
                else:
                    kind = type(getattr(cls, key))
                    kwargs[key] = kind(raw) if not isinstance(raw, kind) else raw
            except ValueError as exc:
                raise ValidationError(f"bad value for {raw_key!r}: {raw!r}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        self.score_variants()
        self.attack_variants()
        if not self.scores or not self.attacks:
            raise ValidationError("score and attack variant lists must be nonempty")
        if self.models < 2 or self.models % 2:
            raise ValidationError("models must be even and >= 2")
        if not all(0 < f < 1 for f in self.fpr):
            raise ValidationError("fpr levels must lie in (0, 1)")
        if self.dataset and not os.path.isfile(self.dataset):
            raise ValidationError(f"dataset file {self.dataset!r} does not exist")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        self.synth_spec().validate()
        self.train_config().validate()
        Architecture(self.dim, max(self.classes, 2), self.hidden, self.activation)

    def score_variants(self):
        return [ScoreVariant.parse(s) for s in self.scores]

    def attack_variants(self):
        return [AttackVariant.parse(a) for a in self.attacks]

    def synth_spec(self):
        return dset.SynthSpec(self.classes, self.dim, self.per_class, self.spread,
                              self.center_scale, self.seed)

    def train_config(self):
        return TrainConfig(self.epochs, self.batch, self.lr, 0, self.init_scale)


def parse_config_file(path):
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
    return values


def _sha(data):
    return hashlib.sha256(data).hexdigest()


def _file_sha(path):
    with open(path, "rb") as fh:
        return _sha(fh.read())


def _key(*parts):
    return _sha(json.dumps(parts, sort_keys=True).encode())


class StageError(Exception):
    """Wraps a stage failure; ``stage`` names where it happened."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class _Store:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.path = os.path.join(out_dir, MANIFEST)
        self.entries = {}
        if os.path.exists(self.path):
            try:
                with open(self.path, encoding="utf-8") as fh:
                    self.entries = json.load(fh)
            except (OSError, ValueError):
                self.entries = {}
        self.reused = []
        self.built = []
        self._stage_files = []

    def abspath(self, rel):
        return os.path.join(self.out_dir, rel)

    def fresh(self, rel, key):
        entry = self.entries.get(rel)
        p = self.abspath(rel)
        if entry is None or entry.get("key") != key or not os.path.exists(p):
            return None
        sha = _file_sha(p)
        return sha if sha == entry.get("sha256") else None

    def produce(self, rel, key, build):
        """Return the artifact's sha256, running ``build(path)`` only when stale."""
        sha = self.fresh(rel, key)
        if sha is not None:
            self.reused.append(rel)
            return sha
        p = self.abspath(rel)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self._stage_files.append(rel)
        build(p)
        sha = _file_sha(p)
        self.entries[rel] = {"key": key, "sha256": sha}
        self.built.append(rel)
        return sha

    def begin_stage(self):
        self._stage_files = []

    def rollback_stage(self):
        for rel in self._stage_files:
            self.entries.pop(rel, None)
            try:
                os.remove(self.abspath(rel))
            except FileNotFoundError:
                pass
        self._stage_files = []

    def save(self):
        data = json.dumps(self.entries, sort_keys=True, indent=1).encode()
        tmp = self.path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, self.path)


@dataclass
class PipelineOutcome:
    out_dir: str
    csv_path: str
    svg_path: str
    built: list = field(default_factory=list)
    reused: list = field(default_factory=list)


def run_pipeline(cfg):
    """Run every stage, reusing hash-consistent artifacts already on disk."""
    cfg.validate()
    score_variants = cfg.score_variants()
    attack_variants = cfg.attack_variants()
    os.makedirs(cfg.out_dir, exist_ok=True)
    store = _Store(cfg.out_dir)

    def stage(name, fn):
        store.begin_stage()
        try:
            return fn()
        except Exception as exc:
            store.rollback_stage()
            raise StageError(name, exc) from exc
        finally:
            store.save()

    cache = {}

    def get_dataset():
        if "ds" not in cache:
            cache["ds"] = dset.load_dataset(store.abspath("dataset.dset"))
        return cache["ds"]

    # dataset
    def do_dataset():
        if cfg.dataset:
            src_sha = _file_sha(cfg.dataset)
            key = _key("dataset-file", src_sha)

            def build(p):
                dset.save_dataset(dset.load_dataset(cfg.dataset), p)
        else:
            key = _key("synth", cfg.classes, cfg.dim, cfg.per_class, repr(cfg.spread),
                       repr(cfg.center_scale), cfg.seed)

            def build(p):
                dset.save_dataset(dset.generate_synthetic(cfg.synth_spec()), p)
        return store.produce("dataset.dset", key, build)

    ds_sha = stage("synth", do_dataset)
    ds = get_dataset()
    arch = Architecture(ds.dim, ds.num_classes, cfg.hidden, cfg.activation)
    ens = EnsembleConfig(arch, cfg.train_config(), cfg.models, cfg.seed)
    mask_seed = derive_seed(cfg.seed, STREAM_MASK)

    # shadows
    def do_shadows():
        mask_sha = store.produce(
            "mask.mmsk", _key("mask", ds_sha, cfg.models, mask_seed),
            lambda p: save_mask(build_mask(cfg.models, ds.num_examples, mask_seed), p))
        mask = load_mask(store.abspath("mask.mmsk"))
        tcfg = cfg.train_config()
        rels = [f"models/model_{i:03d}.cmlp" for i in range(cfg.models)]
        keys = [_key("model", ds_sha, mask_sha, i, list(arch.widths), arch.activation,
                     tcfg.epochs, tcfg.batch_size, repr(tcfg.learning_rate),
                     repr(tcfg.init_scale), ens.model_seed(i)) for i in range(cfg.models)]
        stale = [i for i in range(cfg.models) if store.fresh(rels[i], keys[i]) is None]
        trained = {}
        if stale:
            log.info("training %d of %d shadow models", len(stale), cfg.models)
            models = train_ensemble(ds, mask, ens, cfg.jobs, indices=stale)
            trained = dict(zip(stale, models))
        model_shas = [store.produce(rels[i], keys[i],
                                    lambda p, i=i: save_model(trained[i], p))
                      for i in range(cfg.models)]
        pred_sha = store.produce(
            "predictions.pmat", _key("predictions", ds_sha, model_shas),
            lambda p: save_predictions(
                predict_matrix([load_model(store.abspath(r)) for r in rels], ds, cfg.jobs), p))
        return mask_sha, pred_sha

    mask_sha, pred_sha = stage("shadows", do_shadows)

    # scoring
    def do_scores():
        pm = None
        shas = {}
        for sv in score_variants:
            def build(p, sv=sv):
                nonlocal pm
                if pm is None:
                    pm = load_predictions(store.abspath("predictions.pmat"))
                save_scores(score_matrix(pm, ds.labels if sv.needs_labels else None, sv), p)
            shas[sv] = store.produce(f"scores/{sv.cli_name}.scor",
                                     _key("score", pred_sha, ds_sha, sv.code), build)
        return shas

    score_shas = stage("score", do_scores)

    # attacks
    def do_attacks():
        mask = load_mask(store.abspath("mask.mmsk"))
        rels = []
        for av in attack_variants:
            for sv in score_variants:
                rel = f"attacks/{av.cli_name}__{sv.cli_name}.attk"

                def build(p, av=av, sv=sv):
                    sm = load_scores(store.abspath(f"scores/{sv.cli_name}.scor"))
                    save_result(run_attack(sm, mask, av), p)
                store.produce(rel, _key("attack", score_shas[sv], mask_sha, av.code), build)
                rels.append(rel)
        return rels

    attack_rels = stage("attack", do_attacks)

    # evaluation
    csv_path = os.path.join(cfg.out_dir, "report.csv")
    svg_path = os.path.join(cfg.out_dir, "report.svg")

    def do_eval():
        results = [load_result(store.abspath(r)) for r in attack_rels]
        emit_report(results, csv_path, svg_path, cfg.fpr)

    stage("eval", do_eval)
    return PipelineOutcome(cfg.out_dir, csv_path, svg_path, store.built, store.reused)

