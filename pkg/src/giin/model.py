"""End-to-end model: extraction, CELM, GRM and final category prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .celm import CelmUnit, celm_aux_loss, celm_forward
from .config import TrainConfig, rng_for
from .errors import ConfigError
from .extractor import add_tiny_conv, precomputed, tiny_conv
from .grm import GatLayerParams, build_topology, grm_forward
from .optim import ParamStore, init_params
from .schema import DEFAULT_SCHEMA, CategorySchema

MODALITIES = ("D", "C")


@dataclass
class FcpUnit:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor


def fcp_forward(z: Tensor, unit: FcpUnit, activation: str = "none") -> Tensor:
    """Two affine layers on the fused per-category vector; returns logits."""
    hidden = ad.affine(z, unit.W1, unit.b1)
    if activation == "elu":
        hidden = ad.elu(hidden)
    return ad.affine(hidden, unit.W2, unit.b2)


@dataclass
class Forward:
    fcp_logits: list[Tensor]
    aux_logits: dict[str, list[Tensor]] = field(default_factory=dict)
    nodes_in: Tensor | None = None
    nodes_out: Tensor | None = None
    attention: list[Tensor] = field(default_factory=list)

    def probabilities(self) -> list[np.ndarray]:
        return [ad.softmax(lg).data for lg in self.fcp_logits]


@dataclass
class LossParts:
    total: Tensor
    fcp: float
    aux_d: float
    aux_c: float


class GiinModel:
    """Parameters and forward pass for one configuration.

    Parameter names follow ``<module>.<modality>.<category>.<tensor>``,
    e.g. ``celm.D.PN.W0`` or ``fcp.DIAG.W2``.
    """

    def __init__(self, cfg: TrainConfig, schema: CategorySchema = DEFAULT_SCHEMA,
                 params: ParamStore | None = None):
        cfg.validate()
        self.cfg = cfg
        self.schema = schema
        self.topology = (build_topology(cfg.topology, schema.names)
                         if cfg.topology is not None else None)
        self.modalities = ("D",) if cfg.topology == "single" else MODALITIES
        self.params = params if params is not None else self._init_params()
        self.pipeline = None  # set by train(); maps examples to model inputs

    # ------------------------------------------------------------- params
    def _init_params(self) -> ParamStore:
        cfg, schema = self.cfg, self.schema
        rng = rng_for(cfg.seed, "init")
        store = ParamStore()
        f = cfg.feature_dim
        if cfg.extractor == "tiny-conv":
            for mod in self.modalities:
                add_tiny_conv(store, f"extractor.{mod}", cfg.conv_channels, f, rng)
        if cfg.mode != "baseline":
            for mod in self.modalities:
                for cat in schema.categories:
                    p = f"celm.{mod}.{cat.name}"
                    store.add(f"{p}.W0", init_params("glorot", (f, f), rng))
                    store.add(f"{p}.b0", init_params("zero", (f,), rng))
                    store.add(f"{p}.W1", init_params("glorot", (cat.k, f), rng))
                    store.add(f"{p}.b1", init_params("zero", (cat.k,), rng))
        if self.topology is not None:
            in_dim = 2 * f if cfg.topology == "fused" else f
            for li, (heads, width) in enumerate(zip(cfg.heads, cfg.head_widths), start=1):
                for m in range(heads):
                    store.add(f"grm.l{li}.h{m}.W", init_params("glorot", (width, in_dim), rng))
                    store.add(f"grm.l{li}.h{m}.a", init_params("glorot", (2 * width,), rng))
                in_dim = heads * width
        z_dim = self.fcp_in_dim
        for cat in schema.categories:
            p = f"fcp.{cat.name}"
            store.add(f"{p}.W1", init_params("glorot", (cfg.fcp_hidden, z_dim), rng))
            store.add(f"{p}.b1", init_params("zero", (cfg.fcp_hidden,), rng))
            store.add(f"{p}.W2", init_params("glorot", (cat.k, cfg.fcp_hidden), rng))
            store.add(f"{p}.b2", init_params("zero", (cat.k,), rng))
        return store

    @property
    def fcp_in_dim(self) -> int:
        if self.topology is None:
            return 2 * self.cfg.feature_dim
        w = self.cfg.head_widths[-1]
        return w if self.cfg.topology in ("fused", "single") else 2 * w

    def celm_unit(self, mod: str, cat: str) -> CelmUnit:
        p = f"celm.{mod}.{cat}"
        s = self.params
        return CelmUnit(s[f"{p}.W0"], s[f"{p}.b0"], s[f"{p}.W1"], s[f"{p}.b1"])

    def fcp_unit(self, cat: str) -> FcpUnit:
        p = f"fcp.{cat}"
        s = self.params
        return FcpUnit(s[f"{p}.W1"], s[f"{p}.b1"], s[f"{p}.W2"], s[f"{p}.b2"])

    def gat_layers(self) -> list[GatLayerParams]:
        s = self.params
        return [GatLayerParams([s[f"grm.l{li}.h{m}.W"] for m in range(h)],
                               [s[f"grm.l{li}.h{m}.a"] for m in range(h)])
                for li, h in enumerate(self.cfg.heads, start=1)]

    def param_groups(self) -> dict[str, list[str]]:
        """Parameter names grouped by unit (one CELM/FCP unit, one GAT head, ...)."""
        groups: dict[str, list[str]] = {}
        for name in self.params:
            key = name.rsplit(".", 1)[0]
            if name.startswith("extractor."):
                key = ".".join(name.split(".")[:2])
            groups.setdefault(key, []).append(name)
        return groups

    # ------------------------------------------------------------ forward
    def extract(self, derm, clin) -> dict[str, Tensor]:
        raw = {"D": derm, "C": clin}
        out = {}
        for mod in self.modalities:
            if self.cfg.extractor == "tiny-conv":
                out[mod] = tiny_conv(raw[mod], self.params, f"extractor.{mod}")
            else:
                out[mod] = precomputed(raw[mod], self.cfg.feature_dim)
        return out

    def forward_features(self, x: dict[str, Tensor]) -> Forward:
        """Everything after extraction; ``x`` maps modality to (B, F) vectors."""
        cats = self.schema.names
        if self.cfg.mode == "baseline":
            if "C" not in x:
                raise ConfigError("baseline mode needs both modalities")
            z = ad.concat([x["D"], x["C"]], axis=-1)
            return Forward([fcp_forward(z, self.fcp_unit(c), self.cfg.fcp_activation) for c in cats])

        h: dict[str, list[Tensor]] = {}
        aux: dict[str, list[Tensor]] = {}
        for mod in self.modalities:
            h[mod], aux[mod] = [], []
            for c in cats:
                hj, lj = celm_forward(x[mod], self.celm_unit(mod, c))
                h[mod].append(hj)
                aux[mod].append(lj)

        act = self.cfg.fcp_activation
        if self.topology is None:
            zs = [ad.concat([h["D"][j], h["C"][j]], axis=-1) for j in range(len(cats))]
            return Forward([fcp_forward(z, self.fcp_unit(c), act) for z, c in zip(zs, cats)], aux)

        variant = self.topology.variant
        if variant == "fused":
            nodes = ad.stack([ad.concat([h["D"][j], h["C"][j]], axis=-1)
                              for j in range(len(cats))], axis=1)
        else:
            nodes = ad.stack([hj for mod in self.modalities for hj in h[mod]], axis=1)
        out, atts = grm_forward(nodes, self.gat_layers(), self.topology, return_attention=True)
        n = len(cats)
        if variant in ("fused", "single"):
            zs = [out[:, j] for j in range(n)]
        else:
            zs = [ad.concat([out[:, j], out[:, n + j]], axis=-1) for j in range(n)]
        logits = [fcp_forward(z, self.fcp_unit(c), act) for z, c in zip(zs, cats)]
        return Forward(logits, aux, nodes, out, atts)

    def forward(self, derm, clin) -> Forward:
        return self.forward_features(self.extract(derm, clin))

    def grm_only(self, nodes) -> Tensor:
        """GRM output for explicit node inputs (B, N, F); used by probes and tests."""
        return grm_forward(ad.as_tensor(nodes), self.gat_layers(), self.topology)

    def loss(self, fw: Forward, labels, lambda_d: float | None = None,
             lambda_c: float | None = None) -> LossParts:
        lam_d = self.cfg.lambda_d if lambda_d is None else lambda_d
        lam_c = self.cfg.lambda_c if lambda_c is None else lambda_c
        return total_loss(fw.fcp_logits, fw.aux_logits.get("D"), fw.aux_logits.get("C"),
                          np.asarray(labels), lam_d, lam_c)


def total_loss(fcp_logits, aux_d, aux_c, labels: np.ndarray, lambda_d: float,
               lambda_c: float) -> LossParts:
    """Batch mean of  lambda_d * L_celm_D + lambda_c * L_celm_C + L_fcp.

    Each term sums cross-entropy over the categories; missing auxiliary
    logits (baseline mode, single modality) contribute zero.
    """
    labels = np.atleast_2d(labels)
    l_fcp = celm_aux_loss(fcp_logits, labels)
    per_example = l_fcp
    parts = {"D": 0.0, "C": 0.0}
    for key, aux, lam in (("D", aux_d, lambda_d), ("C", aux_c, lambda_c)):
        if aux is None:
            continue
        l_aux = celm_aux_loss(aux, labels)
        parts[key] = float(l_aux.data.mean())
        per_example = ad.add(per_example, ad.scale(l_aux, lam))
    return LossParts(ad.mean(per_example), float(l_fcp.data.mean()), parts["D"], parts["C"])


def stack_inputs(examples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    derm = np.stack([ex.derm for ex in examples])
    clin = np.stack([ex.clin for ex in examples])
    labels = np.array([ex.labels for ex in examples], dtype=np.int64)
    return derm, clin, labels


def predict(model: GiinModel, examples, batch_size: int = 64, transform=None) -> list[np.ndarray]:
    """Class probabilities per category, each of shape (n_examples, k).

    ``transform`` maps a list of examples to (derm, clin) model inputs; the
    default stacks the stored arrays unchanged.
    """
    outs: list[list[np.ndarray]] = [[] for _ in model.schema.categories]
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        derm, clin = transform(chunk) if transform else stack_inputs(chunk)[:2]
        for j, p in enumerate(model.forward(derm, clin).probabilities()):
            outs[j].append(p)
    k = model.schema.class_counts
    return [np.concatenate(o) if o else np.zeros((0, kj)) for o, kj in zip(outs, k)]
