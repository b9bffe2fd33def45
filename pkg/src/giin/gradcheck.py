"""Finite-difference verification of every primitive and parameter group."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import numeric_grad, relative_error
from .config import TrainConfig, rng_for
from .model import GiinModel
from .schema import DEFAULT_SCHEMA, CategorySchema

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class CheckRow:
    kind: str  # "op", "group", "module" or "loss"
    name: str
    max_rel_error: float
    worst: str = ""
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


@dataclass
class GradcheckReport:
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[CheckRow]:
        return [r for r in self.rows if not r.passed]

    def to_text(self) -> str:
        lines = [f"{'kind':<7} {'name':<22} {'max_rel_err':>12} {'checked':>8}  worst"]
        for r in self.rows:
            flag = "" if r.passed else "  FAIL"
            lines.append(f"{r.kind:<7} {r.name:<22} {r.max_rel_error:12.3e} {r.checked:8d}  {r.worst}{flag}")
        return "\n".join(lines) + "\n"


def _away_from_kink(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 1e-2, np.sign(x + 1e-12) * 0.5, x)


def _op_cases(rng):
    """(name, scalar function of one tensor, input) triples covering each primitive."""
    W = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    w3 = rng.normal(size=(3, 4))
    mask = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
    weights = rng.normal(size=(2, 3))
    x_fixed = rng.normal(size=(2, 5))
    w_cat = rng.normal(size=(2, 6))
    w_stack = rng.normal(size=(2, 2, 3))
    w_ein = rng.normal(size=(2, 3))
    return [
        ("affine", lambda x: ad.total(ad.mul(ad.affine(x, W, b), b)), rng.normal(size=(2, 5))),
        ("affine.weight", lambda w: ad.total(ad.mul(ad.affine(x_fixed, w, b), b)), W.copy()),
        ("softmax", lambda x: ad.total(ad.mul(ad.softmax(x), weights)), rng.normal(size=(2, 3))),
        ("softmax.masked", lambda x: ad.total(ad.mul(ad.softmax(x, mask=mask), w3[:, :3])),
         rng.normal(size=(3, 3))),
        ("leaky_relu", lambda x: ad.total(ad.mul(ad.leaky_relu(x), weights)), _away_from_kink(rng, (2, 3))),
        ("elu", lambda x: ad.total(ad.mul(ad.elu(x), weights)), _away_from_kink(rng, (2, 3))),
        ("concat", lambda x: ad.total(ad.mul(ad.concat([x, ad.scale(x, 2.0)], axis=-1),
                                             w_cat)), rng.normal(size=(2, 3))),
        ("stack", lambda x: ad.total(ad.mul(ad.stack([x, ad.elu(x)], axis=1), w_stack)),
         rng.normal(size=(2, 3))),
        ("getitem", lambda x: ad.total(ad.mul(x[:, 1:], weights[:, :2])), rng.normal(size=(2, 3))),
        ("reshape", lambda x: ad.total(ad.mul(ad.reshape(x, (3, 2)), weights.T)), rng.normal(size=(2, 3))),
        ("mean", lambda x: ad.total(ad.mul(ad.mean(x, axis=0), b[:3])), rng.normal(size=(2, 3))),
        ("einsum", lambda x: ad.total(ad.mul(ad.einsum("ij,kj->ik", x, w3), w_ein)),
         rng.normal(size=(2, 4))),
        ("cross_entropy", lambda x: ad.total(ad.cross_entropy(x, np.array([0, 2]))),
         rng.normal(size=(2, 3))),
    ]


def check_ops(seed: int = 0) -> list[CheckRow]:
    rows = []
    for name, fn, x in _op_cases(np.random.default_rng(seed)):
        rows.append(CheckRow("op", name, ad.grad_check(fn, x, EPS), checked=int(np.size(x))))
    return rows


def gradcheck_inputs(cfg: TrainConfig, seed: int, batch: int = 1):
    """One deterministic synthetic batch matching the model's input kind."""
    rng = rng_for(seed, "gradcheck")
    n_cat = len(DEFAULT_SCHEMA)
    labels = np.stack([rng.integers(k, size=batch) for k in DEFAULT_SCHEMA.class_counts], axis=1)
    if cfg.extractor == "tiny-conv":
        h, w = cfg.image_hw
        derm, clin = (rng.normal(size=(batch, h, w, 3)) for _ in range(2))
    else:
        derm, clin = (rng.normal(size=(batch, cfg.feature_dim)) for _ in range(2))
    assert labels.shape == (batch, n_cat)
    return derm, clin, labels


def check_model(model: GiinModel, derm, clin, labels, samples: int = 8,
                seed: int = 0) -> list[CheckRow]:
    """Compare backward against central differences of the total loss.

    Up to ``samples`` random coordinates per tensor are perturbed; rows
    are reported per parameter group and per module.
    """
    params = model.params
    params.zero_grad()
    model.loss(model.forward(derm, clin), labels).total.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    params.zero_grad()

    def f() -> float:
        return model.loss(model.forward(derm, clin), labels).total.item()

    rng = rng_for(seed, "gradcheck", 1)
    rows = []
    for group, names in model.param_groups().items():
        worst, where, checked = 0.0, "", 0
        for name in names:
            p = params[name]
            n = p.data.size
            flat = rng.choice(n, size=min(samples, n), replace=False)
            for fi in sorted(flat):
                idx = np.unravel_index(fi, p.shape)
                err = relative_error(float(analytic[name][idx]), numeric_grad(f, p.data, idx, EPS))
                checked += 1
                if err >= worst:
                    worst, where = err, f"{name}{list(map(int, idx))}"
        rows.append(CheckRow("group", group, worst, where, checked))
    modules: dict[str, CheckRow] = {}
    for r in rows:
        parts = r.name.split(".")
        key = ".".join(parts[:2]) if parts[0] == "grm" else parts[0]
        m = modules.setdefault(key, CheckRow("module", key, 0.0))
        m.checked += r.checked
        if r.max_rel_error >= m.max_rel_error:
            m.max_rel_error, m.worst = r.max_rel_error, r.worst
    rows += list(modules.values())
    top = max(rows, key=lambda r: r.max_rel_error)
    rows.append(CheckRow("loss", "total", top.max_rel_error, top.worst, sum(r.checked for r in modules.values())))
    return rows


def run_gradcheck(cfg: TrainConfig, schema: CategorySchema = DEFAULT_SCHEMA,
                  samples: int = 8, include_ops: bool = True) -> GradcheckReport:
    model = GiinModel(cfg, schema)
    derm, clin, labels = gradcheck_inputs(cfg, cfg.seed)
    rows = check_ops(cfg.seed) if include_ops else []
    rows += check_model(model, derm, clin, labels, samples, cfg.seed)
    return GradcheckReport(rows)

