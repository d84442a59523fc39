"""Transformer invariants: config validation, RMSNorm, rotary positions,
grouped-query attention vs a plain numpy reference, causality, losses."""

import math

import numpy as np
import pytest

from desklm import tensor as T
from desklm.model import (Model, ModelConfig, forward, gqa_attention,
                          init_params, lm_loss, rms_norm, rope_apply,
                          swiglu_mlp)
from desklm.rng import Rng
from tests.oracles import reference_mha, rotate_reference

MICRO = ModelConfig(vocab_size=31, hidden=16, intermediate=44, n_heads=4,
                    n_kv_heads=2, n_layers=2, context_len=32)


def _rand(rng, shape, std=1.0):
    return rng.normal(shape, std)


# ------------------------------------------------------------- config ----

def test_config_defaults_fill():
    cfg = ModelConfig.from_json({"vocab_size": 500})
    assert (cfg.hidden, cfg.intermediate, cfg.n_heads, cfg.n_kv_heads,
            cfg.n_layers, cfg.context_len) == (128, 352, 8, 1, 4, 256)
    assert cfg.rope_base == 500000.0 and cfg.rmsnorm_eps == 1e-5


def test_config_validation_errors():
    with pytest.raises(ValueError, match="vocab_size"):
        ModelConfig.from_json({})
    with pytest.raises(ValueError, match="unknown model config keys.*n_head"):
        ModelConfig.from_json({"vocab_size": 10, "n_head": 8})
    with pytest.raises(ValueError, match="divisible by n_heads"):
        ModelConfig(vocab_size=10, hidden=100, n_heads=7)
    with pytest.raises(ValueError, match="n_kv_heads"):
        ModelConfig(vocab_size=10, n_heads=8, n_kv_heads=3)
    with pytest.raises(ValueError, match="head_dim"):
        ModelConfig(vocab_size=10, hidden=24, n_heads=8, n_kv_heads=1)
    with pytest.raises(ValueError, match="rope_base"):
        ModelConfig(vocab_size=10, rope_base=0.0)


def test_config_json_round_trip():
    cfg = ModelConfig(vocab_size=31, hidden=64, intermediate=176, n_heads=8,
                      n_kv_heads=2, n_layers=3, context_len=128)
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    assert set(cfg.to_json()) == {
        "hidden", "intermediate", "n_heads", "n_kv_heads", "n_layers",
        "context_len", "vocab_size", "rope_base", "rmsnorm_eps"}


# ------------------------------------------------------------ rmsnorm ----

def test_rms_norm_ones():
    x = T.tensor(np.ones((2, 8)))
    g = T.tensor(np.ones(8))
    y = rms_norm(x, g, 1e-12)
    assert np.allclose(y.data, 1.0, atol=1e-6)


def test_rms_norm_hand_case():
    y = rms_norm(T.tensor(np.array([[3.0, 4.0]])), T.tensor(np.ones(2)), 1e-12)
    rms = math.sqrt(12.5)
    assert np.allclose(y.data, [[3.0 / rms, 4.0 / rms]], atol=1e-9)
    assert abs(y.data[0, 0] - 0.84853) < 1e-5
    assert abs(y.data[0, 1] - 1.13137) < 1e-5


def test_rms_norm_scale_equivariance():
    rng = Rng(5)
    x = _rand(rng, (3, 16))
    g = _rand(rng, (16,))
    a = rms_norm(T.tensor(x), T.tensor(g), 1e-12).data
    b = rms_norm(T.tensor(123.0 * x), T.tensor(g), 1e-12).data
    assert np.allclose(a, b, atol=1e-6)


def test_rms_norm_rejects_bad_eps():
    with pytest.raises(ValueError, match="eps"):
        rms_norm(T.tensor(np.ones((1, 4))), T.tensor(np.ones(4)), 0.0)


# --------------------------------------------------------------- rope ----

def test_rope_position_zero_identity():
    rng = Rng(7)
    x = _rand(rng, (2, 1, 3, 8))
    y = rope_apply(T.tensor(x), [0], 500000.0)
    assert (y.data == x).all()


def test_rope_first_pair_unit_angle():
    x = np.zeros((1, 1, 1, 8))
    x[0, 0, 0, 0] = 1.0  # pair i=0 at (1, 0)
    y = rope_apply(T.tensor(x), [1], 10000.0)
    assert abs(y.data[0, 0, 0, 0] - 0.5403023058681398) < 1e-15
    assert abs(y.data[0, 0, 0, 1] - 0.8414709848078965) < 1e-15


def test_rope_pair_norms_preserved():
    rng = Rng(9)
    x = _rand(rng, (2, 5, 4, 16))
    y = rope_apply(T.tensor(x), np.arange(5), 500000.0).data
    norms_in = np.sqrt(x[..., 0::2] ** 2 + x[..., 1::2] ** 2)
    norms_out = np.sqrt(y[..., 0::2] ** 2 + y[..., 1::2] ** 2)
    assert np.abs(norms_in - norms_out).max() < 1e-12


def test_rope_matches_reference_rotation():
    rng = Rng(11)
    x = _rand(rng, (2, 6, 3, 8))  # [b, s, heads, d]
    got = rope_apply(T.tensor(x), np.arange(6), 500.0).data
    ref = rotate_reference(x.transpose(0, 2, 1, 3), 500.0).transpose(0, 2, 1, 3)
    assert np.abs(got - ref).max() < 1e-12


def test_rope_relative_position_property():
    rng = Rng(13)
    d = 8
    q = _rand(rng, (d,))
    k = _rand(rng, (d,))
    base = 1000.0

    def score(m, n):
        qm = rope_apply(T.tensor(q.reshape(1, 1, 1, d)), [m], base).data.ravel()
        kn = rope_apply(T.tensor(k.reshape(1, 1, 1, d)), [n], base).data.ravel()
        return float(qm @ kn)

    for m, n in [(0, 0), (3, 1), (7, 2), (5, 5)]:
        assert abs(score(m, n) - score(m + 11, n + 11)) < 1e-8


def test_rope_odd_head_dim_error():
    with pytest.raises(ValueError, match="even"):
        rope_apply(T.tensor(np.ones((1, 1, 1, 7))), [0], 10.0)


# ---------------------------------------------------------- attention ----

def _layer_weights(rng, h, kv_dim, std=0.2):
    return {
        "wq": T.tensor(_rand(rng, (h, h), std), requires_grad=True),
        "wk": T.tensor(_rand(rng, (h, kv_dim), std), requires_grad=True),
        "wv": T.tensor(_rand(rng, (h, kv_dim), std), requires_grad=True),
        "wo": T.tensor(_rand(rng, (h, h), std), requires_grad=True),
    }


def test_gqa_equals_mha_when_groups_degenerate():
    cfg = ModelConfig(vocab_size=10, hidden=16, intermediate=44, n_heads=4,
                      n_kv_heads=4, n_layers=1, context_len=16, rope_base=1000.0)
    rng = Rng(21)
    layer = _layer_weights(rng, 16, 16)
    x = _rand(rng, (2, 7, 16))
    got = gqa_attention(T.tensor(x), layer, cfg).data
    ref = reference_mha(x, layer["wq"].data, layer["wk"].data,
                        layer["wv"].data, layer["wo"].data, n_heads=4,
                        rope_base=1000.0)
    assert np.abs(got - ref).max() < 1e-10


def test_gqa_single_position_is_value_projection():
    cfg = ModelConfig(vocab_size=10, hidden=8, intermediate=22, n_heads=2,
                      n_kv_heads=1, n_layers=1, context_len=4)
    rng = Rng(23)
    layer = _layer_weights(rng, 8, 4)
    x = _rand(rng, (3, 1, 8))
    got = gqa_attention(T.tensor(x), layer, cfg).data
    v = x @ layer["wv"].data              # [3, 1, 4] — the single KV group
    merged = np.concatenate([v, v], axis=-1)  # both heads read group 0
    assert np.abs(got - merged @ layer["wo"].data).max() < 1e-12


def test_gqa_head_to_group_routing():
    # each KV group writes a distinct constant value; at seq len 1 every
    # head's output block equals its group's constant, exposing the routing
    h, nh, nkv = 64, 32, 4
    d = h // nh
    cfg = ModelConfig(vocab_size=10, hidden=h, intermediate=176, n_heads=nh,
                      n_kv_heads=nkv, n_layers=1, context_len=4)
    rng = Rng(25)
    x = _rand(rng, (1, 1, h))
    wv = np.zeros((h, nkv * d))
    for g in range(nkv):
        wv[0, g * d: (g + 1) * d] = float(g + 1)  # group g → (g+1)·x[0]
    layer = {
        "wq": T.tensor(_rand(rng, (h, h))),
        "wk": T.tensor(_rand(rng, (h, nkv * d))),
        "wv": T.tensor(wv),
        "wo": T.tensor(np.eye(h)),
    }
    out = gqa_attention(T.tensor(x), layer, cfg).data[0, 0]
    rep = nh // nkv
    for head in range(nh):
        block = out[head * d: (head + 1) * d]
        expected_group = head // rep
        assert np.allclose(block, (expected_group + 1) * x[0, 0, 0], atol=1e-12), head
    assert 8 // rep == 1 and 31 // rep == 3


def test_attention_is_causal():
    cfg = MICRO
    model = Model(cfg, seed=3)
    rng = Rng(31)
    ids = np.array([[rng.randint(cfg.vocab_size) for _ in range(8)]])
    base = model.forward(ids).data.copy()
    for t in range(7):
        for _ in range(3):
            perturbed = ids.copy()
            pos = t + 1 + rng.randint(8 - t - 1)
            perturbed[0, pos] = rng.randint(cfg.vocab_size)
            out = model.forward(perturbed).data
            assert (out[0, : t + 1] == base[0, : t + 1]).all()


# -------------------------------------------------------------- swiglu ----

def test_swiglu_zero_gate_annihilates():
    rng = Rng(41)
    layer = {
        "gate": T.tensor(np.zeros((8, 22))),
        "up": T.tensor(_rand(rng, (8, 22))),
        "down": T.tensor(_rand(rng, (22, 8))),
    }
    out = swiglu_mlp(T.tensor(_rand(rng, (2, 3, 8))), layer)
    assert (out.data == 0).all()


def test_swiglu_scalar_closed_form():
    one = np.ones((1, 1))
    layer = {"gate": T.tensor(one.copy()), "up": T.tensor(one.copy()),
             "down": T.tensor(one.copy())}
    out = swiglu_mlp(T.tensor(one.copy()), layer)
    assert abs(out.data[0, 0] - 0.7310585786300049) < 1e-15


def test_swiglu_gradient_check():
    rng = Rng(43)
    x = _rand(rng, (2, 4))
    layer = {
        "gate": T.tensor(_rand(rng, (4, 11)), requires_grad=True),
        "up": T.tensor(_rand(rng, (4, 11)), requires_grad=True),
        "down": T.tensor(_rand(rng, (11, 4)), requires_grad=True),
    }

    def f(g):
        lay = dict(layer, gate=g)
        return T.sum_all(swiglu_mlp(T.tensor(x), lay))

    max_rel, _, _ = T.finite_diff_check(f, layer["gate"])
    assert max_rel < 1e-5


# ------------------------------------------------------------- forward ----

def test_forward_shapes_and_errors():
    model = Model(MICRO, seed=1)
    out = model.forward(np.zeros((2, 5), dtype=np.int64))
    assert out.shape == (2, 5, 31)
    with pytest.raises(ValueError, match="out of range"):
        model.forward(np.full((1, 4), 31, dtype=np.int64))
    with pytest.raises(ValueError, match="exceeds context_len"):
        model.forward(np.zeros((1, 33), dtype=np.int64))
    with pytest.raises(ValueError, match="batch, seq"):
        model.forward(np.zeros(5, dtype=np.int64))


def test_untied_embeddings_independent():
    model = Model(MICRO, seed=2)
    before = model.params["lm_head"].data.tobytes()
    model.params["token_embedding"].data += 0.5
    assert model.params["lm_head"].data.tobytes() == before
    before_emb = model.params["token_embedding"].data.tobytes()
    model.params["lm_head"].data += 0.25
    assert model.params["token_embedding"].data.tobytes() == before_emb


def test_every_parameter_gets_gradient():
    model = Model(MICRO, seed=4)
    rng = Rng(51)
    ids = np.array([[rng.randint(31) for _ in range(8)] for _ in range(2)])
    targets = np.array([[rng.randint(31) for _ in range(8)] for _ in range(2)])
    loss = lm_loss(model.forward(ids), targets, np.ones((2, 8)))
    grads = T.backward(loss)
    for name, p in model.params.items():
        g = grads.get(p)
        assert g is not None, f"{name} missing from gradient map"
        assert np.abs(g.data).max() > 0, f"{name} has all-zero gradient"


def test_init_loss_near_uniform():
    model = Model(MICRO, seed=6)
    rng = Rng(61)
    ids = np.array([[rng.randint(31) for _ in range(16)] for _ in range(4)])
    targets = np.array([[rng.randint(31) for _ in range(16)] for _ in range(4)])
    loss = lm_loss(model.forward(ids), targets, np.ones((4, 16))).item()
    assert abs(loss - math.log(31)) < 0.05, loss


# ---------------------------------------------------------------- loss ----

def test_lm_loss_uniform_logits():
    logits = T.tensor(np.zeros((1, 4, 31)))
    targets = np.zeros((1, 4), dtype=np.int64)
    loss = lm_loss(logits, targets, np.ones((1, 4)))
    assert abs(loss.item() - math.log(31)) < 1e-12
    assert abs(loss.item() - 3.43399) < 1e-5


def test_lm_loss_hand_case_ln2():
    logits = T.tensor(np.zeros((1, 1, 2)))
    loss = lm_loss(logits, np.zeros((1, 1), dtype=np.int64), np.ones((1, 1)))
    assert abs(loss.item() - math.log(2)) < 1e-15


def test_lm_loss_perfect_prediction_limit():
    logits_data = np.zeros((1, 3, 5))
    targets = np.array([[1, 2, 3]])
    for t in range(3):
        logits_data[0, t, targets[0, t]] = 1e4
    loss = lm_loss(T.tensor(logits_data), targets, np.ones((1, 3)))
    assert loss.item() < 1e-10


def test_lm_loss_empty_mask_error():
    logits = T.tensor(np.zeros((1, 2, 5)))
    with pytest.raises(ValueError, match="mask"):
        lm_loss(logits, np.zeros((1, 2), dtype=np.int64), np.zeros((1, 2)))


def test_lm_loss_respects_mask():
    rng = Rng(71)
    noisy = _rand(rng, (1, 4, 7))
    targets = np.array([[0, 1, 2, 3]])
    mask = np.array([[1.0, 0.0, 1.0, 0.0]])
    full = lm_loss(T.tensor(noisy), targets, mask).item()
    sub = lm_loss(T.tensor(noisy[:, [0, 2]]), targets[:, [0, 2]],
                  np.ones((1, 2))).item()
    assert abs(full - sub) < 1e-12


# ------------------------------------------------------------ gradcheck ----

GRADCHECK = ModelConfig(vocab_size=31, hidden=16, intermediate=44, n_heads=4,
                        n_kv_heads=2, n_layers=2, context_len=16)


@pytest.mark.parametrize("pname", ["layers.0.wq", "layers.1.down",
                                   "token_embedding", "final_norm"])
def test_model_gradient_spot_checks(pname):
    model = Model(GRADCHECK, seed=8)
    rng = Rng(81)
    ids = np.array([[rng.randint(31) for _ in range(8)]])
    targets = np.array([[rng.randint(31) for _ in range(8)]])
    mask = np.ones((1, 8))

    def f(p):
        params = dict(model.params)
        params[pname] = p
        return lm_loss(forward(params, GRADCHECK, ids), targets, mask)

    max_rel, _, _ = T.finite_diff_check(f, model.params[pname])
    assert max_rel < 1e-4, (pname, max_rel)


# ------------------------------------------------------------ generate ----

class ScriptedModel(Model):
    """Overrides logits with a fixed per-step script, for loop testing."""

    def __init__(self, script, vocab=8):
        super().__init__(ModelConfig(vocab_size=vocab, hidden=16,
                                     intermediate=44, n_heads=2,
                                     n_kv_heads=1, n_layers=1,
                                     context_len=64), seed=0)
        self.script = list(script)
        self.calls = 0

    def logits(self, ids):
        out = np.zeros((len(ids), self.config.vocab_size))
        tok = self.script[min(self.calls, len(self.script) - 1)]
        out[-1, tok] = 10.0
        self.calls += 1
        return out


def test_generate_greedy_follows_argmax_and_stops_at_eos():
    m = ScriptedModel([5, 6, 2, 7])  # 2 is EOS
    out = m.generate_greedy([1, 1], max_new_tokens=10)
    assert out == [5, 6, 2]


def test_generate_greedy_budget_and_tie_break():
    m = ScriptedModel([4])
    assert m.generate_greedy([1], max_new_tokens=3) == [4, 4, 4]
    model = Model(MICRO, seed=9)
    model.params["lm_head"].data[:] = 0.0  # all logits equal → lowest id
    out = model.generate_greedy([1, 2, 3], max_new_tokens=1)
    assert out == [0]


def test_generate_greedy_context_guard():
    model = Model(MICRO, seed=9)
    with pytest.raises(ValueError, match="context_len"):
        model.generate_greedy(list(range(30)), max_new_tokens=10)


def test_generate_greedy_deterministic():
    model = Model(MICRO, seed=10)
    a = model.generate_greedy([1, 4, 5], max_new_tokens=6)
    b = model.generate_greedy([1, 4, 5], max_new_tokens=6)
    assert a == b and len(a) <= 6
