"""Training loop, input pipeline and per-epoch history."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, example_seed, rng_for
from .data import Example, split_of
from .errors import ConfigError
from .imaging import ModalityStats, augment, preprocess
from .metrics import evaluate
from .model import GiinModel, predict, stack_inputs
from .optim import adam_step
from .schema import DEFAULT_SCHEMA, CategorySchema

log = logging.getLogger(__name__)


class InputPipeline:
    """Turns examples into model inputs.

    Feature examples pass through. Image examples are optionally augmented
    (training only), resized and normalised with training-split statistics
    of their modality.
    """

    def __init__(self, cfg: TrainConfig, train_examples):
        self.cfg = cfg
        self.stats: dict[str, ModalityStats] = {}
        self.images = bool(train_examples) and train_examples[0].kind == "image"
        if self.images:
            size = cfg.image_hw
            self.stats = {"derm": ModalityStats.fit([e.derm for e in train_examples], size),
                          "clin": ModalityStats.fit([e.clin for e in train_examples], size)}

    def __call__(self, examples, epoch: int | None = None):
        if not self.images:
            return stack_inputs(examples)[:2]
        size = self.cfg.image_hw
        out = {}
        for mod in ("derm", "clin"):
            imgs = []
            for ex in examples:
                img = getattr(ex, mod)
                if epoch is not None and self.cfg.augment:
                    img = augment(img, example_seed(self.cfg.seed, f"{ex.id}/{mod}", epoch))
                imgs.append(preprocess(img, self.stats[mod], size))
            out[mod] = np.stack(imgs)
        return out["derm"], out["clin"]


@dataclass
class EpochRecord:
    epoch: int
    total: float
    fcp: float
    aux_d: float
    aux_c: float
    accuracy: tuple[float, ...]
    valid_auc: float | None = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    categories: tuple[str, ...]
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        """Deterministic CSV (wall time is left out so reruns are byte-identical)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "total", "fcp", "aux_d", "aux_c",
                    *(f"acc_{c}" for c in self.categories), "valid_auc"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.total), repr(r.fcp), repr(r.aux_d), repr(r.aux_c),
                        *(repr(a) for a in r.accuracy),
                        "NA" if r.valid_auc is None else repr(r.valid_auc)])
        return buf.getvalue()


def train(dataset, cfg: TrainConfig, schema: CategorySchema = DEFAULT_SCHEMA,
          model: GiinModel | None = None, on_epoch=None) -> tuple[GiinModel, TrainHistory]:
    """Fit a model on the ``train`` split of ``dataset``.

    Each epoch shuffles the training examples with a stream seeded from
    (seed, epoch), then runs mean-reduced mini-batch Adam steps. When
    ``cfg.select_best`` is set and a validation split exists, the parameters
    with the best validation average AUC are restored at the end.
    """
    cfg.validate()
    train_set = split_of(dataset, "train")
    if not train_set:
        raise ConfigError("dataset has no training examples")
    valid_set = split_of(dataset, "valid")
    model = model or GiinModel(cfg, schema)
    pipeline = InputPipeline(cfg, train_set)
    model.pipeline = pipeline
    history = TrainHistory(schema.names)
    best = (-np.inf, None)
    n = len(train_set)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = rng_for(cfg.seed, "shuffle", epoch).permutation(n)
        sums = np.zeros(4)
        correct = np.zeros(len(schema))
        for i in range(0, n, cfg.batch_size):
            batch: list[Example] = [train_set[k] for k in order[i:i + cfg.batch_size]]
            derm, clin = pipeline(batch, epoch)
            labels = np.array([ex.labels for ex in batch])
            fw = model.forward(derm, clin)
            parts = model.loss(fw, labels)
            parts.total.backward()
            adam_step(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            b = len(batch)
            sums += b * np.array([parts.total.item(), parts.fcp, parts.aux_d, parts.aux_c])
            for j, lg in enumerate(fw.fcp_logits):
                correct[j] += np.sum(lg.data.argmax(axis=-1) == labels[:, j])
        rec = EpochRecord(epoch + 1, *(float(v) for v in sums / n),
                          accuracy=tuple(float(c) for c in correct / n))
        if valid_set:
            probs = predict(model, valid_set, transform=pipeline)
            rep = evaluate(probs, np.array([e.labels for e in valid_set]), schema)
            rec.valid_auc = rep.average("auc")
            if cfg.select_best and rec.valid_auc is not None and rec.valid_auc > best[0]:
                best = (rec.valid_auc, model.params.snapshot())
        rec.seconds = time.perf_counter() - start
        history.records.append(rec)
        log.info("epoch %d/%d total %.5f fcp %.5f aux_d %.5f aux_c %.5f (%.2fs)",
                 rec.epoch, cfg.epochs, rec.total, rec.fcp, rec.aux_d, rec.aux_c, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    if cfg.select_best and best[1] is not None:
        model.params.load(best[1])
    return model, history
