import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from trajrecon.head import (
    PredictionHead,
    Targets,
    masked_ce_from_logits,
    masked_ce_loss,
    predict_masked,
)
from trajrecon.embeddings import N_CONTEXT
from trajrecon.masking import empty_plan, plan_from_positions


def targets(pairs, row=0):
    return Targets(torch.tensor([row] * len(pairs)), torch.tensor([p for p, _ in pairs]),
                   torch.tensor([t for _, t in pairs]))


def test_zero_head_is_uniform():
    head = PredictionHead(8, 7)
    with torch.no_grad():
        head.proj.weight.zero_()
        head.proj.bias.zero_()
    H = torch.randn(1, N_CONTEXT + 4, 8)
    p = predict_masked(H, head, targets([(0, 1), (3, 2)]))
    torch.testing.assert_close(p, torch.full((2, 7), 1 / 7))


def test_three_way_softmax_hand_values():
    head = PredictionHead(1, 3)
    with torch.no_grad():
        head.proj.weight.copy_(torch.tensor([[1.0], [2.0], [3.0]]))
        head.proj.bias.zero_()
    H = torch.ones(1, N_CONTEXT + 1, 1, dtype=torch.float32)
    p = predict_masked(H, head, targets([(0, 0)]))[0].tolist()
    z = math.exp(1) + math.exp(2) + math.exp(3)
    for got, want, printed in zip(p, [math.exp(k) / z for k in (1, 2, 3)], (0.09003, 0.24473, 0.66524)):
        assert got == pytest.approx(want, abs=1e-6)
        assert round(got, 5) == printed


def test_head_shapes():
    head = PredictionHead(16, 11)
    assert head.W.shape == (11, 16)
    assert head.bias.shape == (11,)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_probabilities_are_proper(seed):
    torch.manual_seed(seed)
    head = PredictionHead(8, 9)
    H = torch.randn(2, N_CONTEXT + 5, 8) * 3
    t = Targets(torch.tensor([0, 1, 1]), torch.tensor([0, 2, 4]), torch.tensor([1, 2, 3]))
    p = predict_masked(H, head, t)
    assert torch.all((p > 0) & (p < 1))
    assert torch.all(torch.abs(p.sum(-1) - 1) <= 1e-6)


def test_perfect_prediction_has_zero_loss():
    probs = torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    assert float(masked_ce_loss(probs, targets([(0, 1), (1, 0)])).total) == 0.0


def test_uniform_loss_closed_form():
    probs = torch.full((2, 100), 0.01, dtype=torch.float64)
    loss = masked_ce_loss(probs, targets([(0, 4), (2, 50)]))
    assert float(loss.total) == pytest.approx(2 * math.log(100), abs=1e-12)
    assert round(float(loss.total), 4) == 9.2103
    assert float(loss.mean) == pytest.approx(math.log(100))


def test_zero_probability_is_clamped_and_logged(caplog):
    probs = torch.tensor([[1.0, 0.0]])
    loss = masked_ce_loss(probs, targets([(0, 1)]))
    assert float(loss.total) == pytest.approx(-math.log(1e-12), rel=1e-6)
    assert "clamped" in caplog.text


def test_loss_decomposes_into_per_target_terms():
    torch.manual_seed(0)
    logits = torch.randn(6, 12, dtype=torch.float64)
    toks = torch.randint(0, 12, (6,))
    t = Targets(torch.zeros(6, dtype=torch.long), torch.arange(6), toks)
    total = float(masked_ce_from_logits(logits, t).total)
    parts = sum(-float(torch.log_softmax(logits[i], -1)[toks[i]]) for i in range(6))
    assert total == pytest.approx(parts, abs=1e-10)
    probs = torch.softmax(logits, -1)
    assert float(masked_ce_loss(probs, t).total) == pytest.approx(total, abs=1e-10)


def test_loss_ignores_unmasked_labels():
    tokens_a = [3, 1, 4, 1, 5]
    tokens_b = [9, 1, 8, 7, 5]  # differs only at unmasked positions 0, 2, 3
    plan_a = plan_from_positions(tokens_a, [1, 4])
    plan_b = plan_from_positions(tokens_b, [1, 4])
    probs = torch.softmax(torch.randn(2, 10), -1)
    la = masked_ce_loss(probs, Targets.from_plans([plan_a]))
    lb = masked_ce_loss(probs, Targets.from_plans([plan_b]))
    assert torch.equal(la.total, lb.total)


def test_empty_targets_give_zero_loss_and_zero_gradient():
    logits = torch.randn(0, 5, requires_grad=True)
    t = Targets.from_plans([empty_plan(4)])
    loss = masked_ce_from_logits(logits, t)
    assert float(loss.total.detach()) == 0.0 and loss.n_targets == 0
    loss.total.backward()
    assert torch.all(logits.grad == 0)
