"""Dataset resolution, the ablation sweep and information-flow probes."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ExperimentConfig, parse_synth_spec
from .data import SEVEN_PC_SPLIT, load_manifest, split_of, synth_generate
from .errors import ConfigError
from .metrics import MetricsReport, report
from .model import GiinModel
from .schema import DEFAULT_SCHEMA, CategorySchema, load_schema
from .train import train

log = logging.getLogger(__name__)

ABLATIONS = (
    ("baseline", "baseline", None),
    ("celm", "celm", None),
    ("celm+grm-separate", "celm+grm", "separate"),
    ("celm+grm-fused", "celm+grm", "fused"),
    ("celm+grm-inv", "celm+grm", "inv"),
    ("celm+grm-cd", "celm+grm", "cd"),
    ("celm+grm-dc", "celm+grm", "dc"),
)


def resolve_schema(cfg: ExperimentConfig) -> CategorySchema:
    return load_schema(cfg.schema) if cfg.schema else DEFAULT_SCHEMA


def resolve_dataset(cfg: ExperimentConfig, schema: CategorySchema | None = None):
    """Examples named by ``cfg.manifest`` or generated from ``cfg.synth``."""
    schema = schema or resolve_schema(cfg)
    if cfg.manifest:
        examples, _ = load_manifest(cfg.manifest, schema)
        return examples
    if cfg.synth:
        kw = parse_synth_spec(cfg.synth)
        train_frac = kw.pop("train", None)
        if train_frac is not None:
            if not 0 < train_frac <= 1:
                raise ConfigError("synth train fraction must lie in (0, 1]")
            v, t = (x / sum(SEVEN_PC_SPLIT[1:]) for x in SEVEN_PC_SPLIT[1:])
            kw["splits"] = (train_frac, (1 - train_frac) * v, (1 - train_frac) * t)
        kw.setdefault("kind", "image" if cfg.extractor == "tiny-conv" else "feature")
        return synth_generate(cfg.seed, feature_dim=cfg.feature_dim, schema=schema,
                              image_size=cfg.image_hw, **kw)
    raise ConfigError("no dataset: give --manifest or --synth")


def isolation_probe(model: GiinModel, rng: np.random.Generator) -> dict[str, bool]:
    """Perturb each modality's GRM inputs and report whether the other side moved."""
    topo = model.topology
    if topo is None or topo.variant in ("fused", "single"):
        return {}
    n = topo.n_nodes // 2
    nodes = rng.normal(size=(1, topo.n_nodes, model.cfg.feature_dim))
    base = model.grm_only(nodes).data
    out = {}
    for src, dst, name in ((slice(n, None), slice(0, n), "derm_moved_by_clin"),
                           (slice(0, n), slice(n, None), "clin_moved_by_derm")):
        pert = nodes.copy()
        pert[:, src] += rng.normal(size=pert[:, src].shape)
        out[name] = not np.array_equal(model.grm_only(pert).data[:, dst], base[:, dst])
    return out


def _run_one(args):
    name, cfg, schema, dataset = args
    model, history = train(dataset, cfg, schema)
    probe = isolation_probe(model, np.random.default_rng(cfg.seed))
    rep = report(model, split_of(dataset, cfg.metrics_split), schema)
    return name, rep, probe, history.records[-1].total


def run_ablation(dataset, cfg: ExperimentConfig, schema: CategorySchema = DEFAULT_SCHEMA,
                 workers: int | None = None) -> list[tuple[str, MetricsReport, dict, float]]:
    """Train every ablation configuration on the same data and seed."""
    if not split_of(dataset, cfg.metrics_split):
        raise ConfigError(f"dataset has no {cfg.metrics_split!r} examples to evaluate")
    jobs = []
    for name, mode, variant in ABLATIONS:
        c = dataclasses.replace(cfg, mode=mode, variant=variant)
        c.validate()
        jobs.append((name, c, schema, dataset))
    workers = workers or int(os.environ.get("GIIN_THREADS", "1") or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for name, rep, probe, loss in results:
        log.info("%-18s avg AUC %s final train loss %.5f %s", name,
                 "NA" if rep.average("auc") is None else f"{rep.average('auc'):.4f}", loss,
                 " ".join(f"{k}={v}" for k, v in probe.items()))
    return results


def ablation_csv(results, schema: CategorySchema = DEFAULT_SCHEMA) -> str:
    """One row per configuration: averages, then the AUC of every class."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    class_cols = [f"{c.name}:{k}" for c in schema.categories for k in c.classes]
    w.writerow(["config", "avg_auc", "avg_sens", "avg_spec", "avg_prec",
                "derm_moved_by_clin", "clin_moved_by_derm", *class_cols])

    def fmt(v):
        return "NA" if v is None else f"{v:.6f}"

    for name, rep, probe, _ in results:
        w.writerow([name, *(fmt(rep.average(m)) for m in ("auc", "sens", "spec", "prec")),
                    probe.get("derm_moved_by_clin", "NA"), probe.get("clin_moved_by_derm", "NA"),
                    *(fmt(r.auc) for r in rep.rows)])
    return buf.getvalue()
