import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from intent_ensemble.errors import OutOfVocabulary, ValidationError
from intent_ensemble.network import (
    ABLATION_FLAGS,
    Ablation,
    EnsembleNet,
    IntentCrossAttention,
    NetworkConfig,
    SelfAttentionStack,
    ensemble_scores,
)

K, C, D = 3, 4, 8


def make_net(seed=0, **kw):
    torch.manual_seed(seed)
    ablation = Ablation.from_names(kw.pop("ablation", []))
    return EnsembleNet(NetworkConfig(n_models=K, n_categories=C, n_intents=D, d_e=8, d_int=4, **kw), ablation).double()


def inputs(seed, n=6, batch=None):
    g = torch.Generator().manual_seed(seed)
    shape = (n,) if batch is None else (batch, n)
    scores = torch.rand(*shape, K, generator=g, dtype=torch.float64)
    mask = torch.rand(*shape, K, generator=g) > 0.2
    cats = torch.randint(0, C, shape, generator=g)
    valid = torch.ones(shape, dtype=torch.bool)
    intent = torch.softmax(torch.randn(*shape[:-1], D, generator=g, dtype=torch.float64), -1)
    return scores, mask, cats, valid, intent


def zero_params(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 12))
def test_weight_rows_are_on_the_simplex(seed, n):
    net = make_net(seed % 7)
    w, ens = net(*inputs(seed, n))
    assert torch.all(w >= 0)
    assert torch.allclose(w.sum(-1), torch.ones(n, dtype=w.dtype), atol=1e-6)
    s = inputs(seed, n)[0]
    assert torch.all(ens <= s.max(-1).values + 1e-12) and torch.all(ens >= s.min(-1).values - 1e-12)


def test_zero_parameters_give_uniform_weights():
    net = make_net()
    zero_params(net)
    w, _ = net(*inputs(1))
    assert torch.allclose(w, torch.full_like(w, 1 / K))


def test_saturated_logits_select_a_model():
    net = make_net()
    zero_params(net)
    with torch.no_grad():
        net.weight_head.bias.copy_(torch.tensor([10.0, -10.0, -10.0]))
    w, _ = net(*inputs(2))
    assert torch.allclose(w[:, 0], torch.ones(6, dtype=w.dtype), atol=1e-4)


def test_ensemble_scores_examples():
    s = torch.tensor([[1.0, 3.0]])
    assert ensemble_scores(torch.tensor([[0.5, 0.5]]), s).item() == 2.0
    assert ensemble_scores(torch.tensor([[0.0, 1.0]]), s).item() == 3.0
    with pytest.raises(ValidationError):
        ensemble_scores(torch.ones(2, 2), torch.ones(2, 3))


def test_identical_columns_pass_through():
    net = make_net(3)
    scores, mask, cats, valid, intent = inputs(3)
    same = scores[:, :1].expand(-1, K).contiguous()
    _, ens = net(same, torch.ones_like(mask), cats, valid, intent)
    assert torch.allclose(ens, same[:, 0])


def test_permutation_equivariance():
    net = make_net(4)
    scores, mask, cats, valid, intent = inputs(4, n=7)
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(0))
    w, ens = net(scores, mask, cats, valid, intent)
    w2, ens2 = net(scores[perm], mask[perm], cats[perm], valid, intent)
    assert torch.allclose(w[perm], w2, atol=1e-10)
    assert torch.allclose(ens[perm], ens2, atol=1e-10)


def test_self_attention_properties():
    torch.manual_seed(0)
    stack = SelfAttentionStack(8, 2, 1).double()
    x = torch.randn(1, 4, 8, dtype=torch.float64)
    x[0, 1] = x[0, 0]
    out = stack(x, torch.ones(1, 4, dtype=torch.bool))
    assert torch.allclose(out[0, 0], out[0, 1])
    zero_params(stack)
    assert torch.equal(stack(x, torch.ones(1, 4, dtype=torch.bool)), x)  # residual only


def test_cross_attention_single_and_identical_rows():
    torch.manual_seed(0)
    query = torch.nn.Linear(4, 8, bias=False).double()
    cross = IntentCrossAttention(8, query).double()
    int_d = torch.randn(1, 4, dtype=torch.float64)
    one = torch.randn(1, 1, 8, dtype=torch.float64)
    out = cross(int_d, one, torch.ones(1, 1, dtype=torch.bool))
    assert torch.allclose(out, cross.value(one))
    same = one.expand(1, 3, 8)
    for _ in range(2):
        out = cross(torch.randn(1, 4, dtype=torch.float64), same, torch.ones(1, 3, dtype=torch.bool))
        assert torch.allclose(out, cross.value(same))


def test_cross_attention_depends_on_intent():
    query = torch.nn.Linear(2, 2, bias=False).double()
    with torch.no_grad():
        query.weight.copy_(torch.eye(2) * 2.0)
    cross = IntentCrossAttention(2, query).double()
    keys = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
    valid = torch.ones(1, 2, dtype=torch.bool)
    a1 = cross.attention(torch.tensor([[1.0, 0.0]], dtype=torch.float64), keys, valid)
    a2 = cross.attention(torch.tensor([[0.0, 1.0]], dtype=torch.float64), keys, valid)
    # logits are q.k / sqrt(2) with q = 2 * intent, so the favored key gets sigmoid(sqrt(2))
    e = 1 / (1 + np.exp(-np.sqrt(2.0)))
    np.testing.assert_allclose(a1[0].detach().numpy(), [e, 1 - e])
    np.testing.assert_allclose(a2[0].detach().numpy(), [1 - e, e])


def test_unknown_category_is_rejected():
    net = make_net()
    scores, mask, cats, valid, intent = inputs(5)
    cats[0] = C
    with pytest.raises(OutOfVocabulary):
        net(scores, mask, cats, valid, intent)


def test_minus_int_equals_zero_intent_projection():
    net = make_net(6)
    ablated = make_net(6, ablation=["-Int"])
    ablated.load_state_dict(net.state_dict())
    scores, mask, cats, valid, intent = inputs(6)
    with torch.no_grad():
        net.intent_proj.weight.zero_()
    w1, _ = net(scores, mask, cats, valid, intent)
    w2, _ = ablated(scores, mask, cats, valid, intent)
    assert torch.allclose(w1, w2)


@pytest.mark.parametrize("flag", list(ABLATION_FLAGS))
def test_each_ablation_runs_on_a_batch(flag):
    net = make_net(7, ablation=[flag])
    scores, mask, cats, valid, intent = inputs(7, batch=3)
    valid[1, 4:] = False
    w, ens = net(scores, mask, cats, valid, intent)
    assert w.shape == (3, 6, K) and ens.shape == (3, 6)
    assert torch.allclose(w.sum(-1), torch.ones(3, 6, dtype=w.dtype))
    assert Ablation.from_names([flag]).names == [flag]


def test_padding_does_not_change_real_rows():
    net = make_net(8)
    s, m, c, v, i = inputs(8, n=4)
    w, _ = net(s, m, c, v, i)
    pad = lambda t, val: torch.cat([t, torch.full((2,) + t.shape[1:], val, dtype=t.dtype)])
    wb, _ = net(pad(s, 0.7).unsqueeze(0), pad(m, True).unsqueeze(0), pad(c, 0).unsqueeze(0),
                torch.tensor([[True] * 4 + [False] * 2]), i.unsqueeze(0))
    assert torch.allclose(wb[0, :4], w, atol=1e-10)


def test_list_level_rows_are_identical():
    net = make_net(9, list_level=True)
    w, _ = net(*inputs(9))
    assert torch.allclose(w, w[:1].expand_as(w))
    zero_params(net)
    w, _ = net(*inputs(9))
    assert torch.allclose(w, torch.full_like(w, 1 / K))


def test_config_and_ablation_validation():
    with pytest.raises(ValidationError):
        NetworkConfig(n_models=2, n_categories=2, n_intents=4, d_e=7, heads=2)
    with pytest.raises(ValidationError):
        Ablation.from_names(["-X"])
    with pytest.raises(ValidationError):
        make_net(ablation=["-I", "-S"])


def test_forward_is_deterministic():
    net = make_net(10)
    x = inputs(10)
    a, b = net(*x), net(*x)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_unconstrained_head_can_leave_the_simplex():
    net = make_net(11, weight_head="unconstrained")
    w, _ = net(*inputs(11))
    assert not torch.allclose(w.sum(-1), torch.ones(6, dtype=w.dtype))
