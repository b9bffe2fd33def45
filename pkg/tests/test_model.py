import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from giin import autodiff as ad
from giin.autodiff import Tensor
from giin.config import TrainConfig
from giin.errors import ConfigError, DimensionError
from giin.gradcheck import check_model, gradcheck_inputs
from giin.model import FcpUnit, GiinModel, fcp_forward, total_loss
from giin.optim import init_params
from giin.schema import DEFAULT_SCHEMA

K = DEFAULT_SCHEMA.class_counts
TINY = 0.03125  # 16 features, head widths (1, 16)

MODE_COMBOS = [("baseline", None), ("celm", None)] + [("celm+grm", v) for v in
                                                      ("separate", "fused", "inv", "cd", "dc", "single")]


def inputs(cfg, batch=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch, cfg.feature_dim)), rng.normal(size=(batch, cfg.feature_dim))


def labels(batch=3, seed=0):
    rng = np.random.default_rng(seed + 100)
    return np.stack([rng.integers(k, size=batch) for k in K], axis=1)


def test_full_width_fcp_input_is_1024():
    model = GiinModel(TrainConfig())
    assert model.fcp_in_dim == 1024
    assert model.params["fcp.DIAG.W1"].shape == (512, 1024)
    assert model.params["fcp.DIAG.W2"].shape == (5, 512)
    assert model.params["celm.C.VS.W0"].shape == (512, 512)
    assert model.params["grm.l1.h7.W"].shape == (8, 512)
    assert model.params["grm.l2.h0.W"].shape == (512, 64)
    assert model.params["grm.l2.h0.a"].shape == (1024,)
    fused = GiinModel(TrainConfig(variant="fused", scale=0.0625))
    assert fused.params["grm.l1.h0.W"].shape == (1, 64)
    assert fused.fcp_in_dim == 32


def test_zero_nodes_give_uniform_probabilities():
    rng = np.random.default_rng(0)
    unit = FcpUnit(init_params("glorot", (4, 8), rng), init_params("zero", (4,), rng),
                   init_params("glorot", (3, 4), rng), init_params("zero", (3,), rng))
    logits = fcp_forward(Tensor(np.zeros((1, 8))), unit)
    np.testing.assert_allclose(ad.softmax(logits).data, 1 / 3, atol=1e-15)
    with pytest.raises(DimensionError):
        fcp_forward(Tensor(np.zeros((1, 6))), unit)


def test_fcp_gradients():
    rng = np.random.default_rng(1)
    unit = FcpUnit(*(Tensor(rng.normal(size=s)) for s in ((4, 8), (4,), (3, 4), (3,))))
    fn = lambda t: ad.total(ad.cross_entropy(fcp_forward(t, unit, "elu"), np.array([2])))  # noqa: E731
    assert ad.grad_check(fn, rng.normal(size=(1, 8))) < 1e-5


# -------------------------------------------------------------- total loss

def _uniform(batch):
    return [Tensor(np.zeros((batch, k))) for k in K]


def test_uniform_total_loss():
    y = labels(2)
    parts = total_loss(_uniform(2), _uniform(2), _uniform(2), y, 0.5, 0.5)
    expected = 2.0 * (np.log(5) + 5 * np.log(3) + 2 * np.log(2))
    assert parts.total.item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(16.98, abs=0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 3), st.floats(0, 3))
def test_total_loss_affine_in_lambda(seed, ld, lc):
    rng = np.random.default_rng(seed)
    y = labels(4, seed % 1000)
    logits = [[Tensor(rng.normal(size=(4, k)) * 3) for k in K] for _ in range(3)]
    at = lambda a, b: total_loss(*logits, y, a, b)  # noqa: E731
    p0 = at(0.0, 0.0)
    assert p0.total.item() == p0.fcp
    p = at(ld, lc)
    assert p.total.item() == pytest.approx(p0.fcp + ld * p.aux_d + lc * p.aux_c, abs=1e-10)
    assert p.total.item() >= p.fcp - 1e-12


def test_loss_matches_per_example_reference():
    rng = np.random.default_rng(3)
    y = labels(3)
    fcp, d, c = ([rng.normal(size=(3, k)) for k in K] for _ in range(3))

    def ce(lg, t):
        lg = lg - lg.max()
        return np.log(np.exp(lg).sum()) - lg[t]

    ref = np.mean([sum(ce(fcp[j][i], y[i, j]) + 0.3 * ce(d[j][i], y[i, j]) + 0.7 * ce(c[j][i], y[i, j])
                       for j in range(8)) for i in range(3)])
    got = total_loss([Tensor(a) for a in fcp], [Tensor(a) for a in d], [Tensor(a) for a in c], y, 0.3, 0.7)
    assert got.total.item() == pytest.approx(ref, abs=1e-12)


# ----------------------------------------------------------------- forward

@pytest.mark.parametrize("mode,variant", MODE_COMBOS)
def test_every_mode_emits_same_shapes(mode, variant):
    cfg = TrainConfig(mode=mode, variant=variant, scale=TINY)
    model = GiinModel(cfg)
    fw = model.forward(*inputs(cfg))
    probs = fw.probabilities()
    assert [p.shape for p in probs] == [(3, k) for k in K]
    for p in probs:
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    again = GiinModel(cfg).forward(*inputs(cfg)).probabilities()
    for a, b in zip(probs, again):
        np.testing.assert_array_equal(a, b)
    if mode == "baseline":
        assert fw.aux_logits == {}
    expected_mods = {"single": {"D"}}.get(variant, {"D", "C"}) if mode != "baseline" else set()
    assert set(fw.aux_logits) == expected_mods


def test_fused_and_single_fcp_take_one_node():
    for variant in ("fused", "single"):
        model = GiinModel(TrainConfig(variant=variant, scale=TINY))
        assert model.fcp_in_dim == model.cfg.head_widths[-1]


def test_variant_requires_grm_mode():
    with pytest.raises(ConfigError):
        GiinModel(TrainConfig(mode="celm", variant="dc", scale=TINY))


def test_argmax_invariant_to_logit_shift():
    cfg = TrainConfig(scale=TINY)
    model = GiinModel(cfg)
    x = inputs(cfg)
    before = [p.argmax(axis=1) for p in model.forward(*x).probabilities()]
    model.params["fcp.PIG.b2"].data += 7.5
    after = [p.argmax(axis=1) for p in model.forward(*x).probabilities()]
    for a, b in zip(before, after):
        np.testing.assert_array_equal(a, b)


def test_baseline_heads_are_independent():
    cfg = TrainConfig(mode="baseline", scale=TINY)
    model = GiinModel(cfg)
    x = inputs(cfg)
    base = model.forward(*x).probabilities()
    model.params["fcp.STR.W1"].data *= -3.0
    moved = model.forward(*x).probabilities()
    for j, cat in enumerate(DEFAULT_SCHEMA.names):
        assert np.array_equal(base[j], moved[j]) == (cat != "STR")


def test_param_groups_enumerate_units():
    model = GiinModel(TrainConfig(scale=0.25, extractor="tiny-conv"))
    groups = model.param_groups()
    assert sum(g.startswith("celm.") for g in groups) == 16
    assert sum(g.startswith("fcp.") for g in groups) == 8
    assert sum(g.startswith("grm.l1.") for g in groups) == 8
    assert sum(g.startswith("grm.l2.") for g in groups) == 1
    assert {g for g in groups if g.startswith("extractor")} == {"extractor.D", "extractor.C"}


def test_init_schemes():
    model = GiinModel(TrainConfig(scale=0.25, extractor="tiny-conv"))
    for name, p in model.params.items():
        if name.rsplit(".", 1)[1].startswith("b"):
            assert not p.data.any(), name
    w = model.params["celm.D.PN.W0"].data
    assert np.abs(w).max() <= np.sqrt(6 / (2 * w.shape[0]))


# -------------------------------------------------------------- gradients

@pytest.mark.parametrize("mode,variant", [("baseline", None), ("celm", None),
                                          ("celm+grm", "dc"), ("celm+grm", "fused"),
                                          ("celm+grm", "single")])
def test_model_gradcheck_desk_scale(mode, variant):
    cfg = TrainConfig(mode=mode, variant=variant, scale=0.0625)
    model = GiinModel(cfg)
    rows = check_model(model, *gradcheck_inputs(cfg, seed=1, batch=2), samples=4)
    assert max(r.max_rel_error for r in rows) < 1e-4


@pytest.mark.slow
def test_model_gradcheck_full_width_one_example():
    cfg = TrainConfig()
    model = GiinModel(cfg)
    rows = check_model(model, *gradcheck_inputs(cfg, seed=0), samples=2)
    assert max(r.max_rel_error for r in rows) < 1e-4


def test_tiny_conv_gradients():
    cfg = TrainConfig(scale=0.0625, extractor="tiny-conv", image_size="9x13", conv_channels=4)
    model = GiinModel(cfg)
    rows = check_model(model, *gradcheck_inputs(cfg, seed=2), samples=6)
    ext = [r for r in rows if r.name.startswith("extractor")]
    assert ext and all(r.max_rel_error < 1e-4 for r in ext)


def test_lambda_combinations_affect_only_aux_terms():
    cfg = TrainConfig(scale=TINY)
    model = GiinModel(cfg)
    fw = model.forward(*inputs(cfg))
    y = labels()
    vals = {lam: model.loss(fw, y, *lam) for lam in itertools.product((0.0, 0.5, 1.0), repeat=2)}
    for (ld, lc), p in vals.items():
        assert p.total.item() == pytest.approx(p.fcp + ld * p.aux_d + lc * p.aux_c, abs=1e-10)
