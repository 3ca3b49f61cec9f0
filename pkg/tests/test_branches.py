import itertools

import numpy as np
import pytest
import torch

from envspoof.branches import (
    GraphBranch,
    classify,
    score,
    split_channel,
    split_frequency,
    split_grid,
)
from envspoof.encoder import TokenGrid
from envspoof.model import Detector
from envspoof.training import ClassWeights, weighted_cross_entropy

from .conftest import finite_difference_check, random_mel


def grid(H=8, W=24, D=64, batch=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return TokenGrid(torch.randn(batch, H * W, D, generator=g), H, W)


class TestSplits:
    def test_frequency_shapes(self):
        low, high = split_frequency(grid(D=768, batch=1))
        assert low.as_grid().shape == (1, 4, 24, 768)
        assert high.as_grid().shape == (1, 4, 24, 768)

    def test_frequency_partition(self):
        g = grid()
        low, high = split_frequency(g)
        rebuilt = torch.cat([low.as_grid(), high.as_grid()], dim=1)
        assert torch.equal(rebuilt, g.as_grid())
        assert torch.equal(low.as_grid(), g.as_grid()[:, :4])

    def test_frequency_minimal(self):
        g = TokenGrid(torch.tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 1)
        low, high = split_frequency(g)
        assert low.tokens.tolist() == [[[1.0, 2.0]]]
        assert high.tokens.tolist() == [[[3.0, 4.0]]]

    def test_channel(self):
        g = grid(D=768, batch=1)
        a, b = split_channel(g)
        assert a.dim == b.dim == 384 and (a.H, a.W) == (8, 24)
        assert torch.equal(torch.cat([a.tokens, b.tokens], dim=-1), g.tokens)

    def test_channel_minimal(self):
        a, b = split_channel(grid(D=2))
        assert a.dim == b.dim == 1

    def test_odd_errors(self):
        with pytest.raises(ValueError):
            split_frequency(grid(H=3))
        with pytest.raises(ValueError):
            split_channel(grid(D=5))
        with pytest.raises(ValueError):
            split_grid(grid(), "time")


class TestBranch:
    def test_single_token(self):
        b = GraphBranch(8, 4, 2)
        e = b(TokenGrid(torch.randn(1, 1, 8), 1, 1))
        assert e.shape == (1, 8)
        assert torch.equal(e[:, :4], e[:, 4:])

    def test_permutation_invariance(self):
        torch.manual_seed(0)
        b = GraphBranch(64, 32, 2).eval()
        g = grid()
        for seed in range(5):
            perm = torch.randperm(192, generator=torch.Generator().manual_seed(seed))
            torch.testing.assert_close(
                b(TokenGrid(g.tokens[:, perm], 8, 24)), b(g), rtol=1e-5, atol=1e-5
            )

    def test_zero_grid(self):
        b = GraphBranch(16, 8, 2)
        for name, p in b.named_parameters():
            if name.endswith("bias"):
                torch.nn.init.zeros_(p)
        assert torch.equal(b(TokenGrid(torch.zeros(1, 6, 16), 2, 3)), torch.zeros(1, 16))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            GraphBranch(16)(grid(D=8))


class TestClassify:
    def test_zero_head(self):
        head = torch.nn.Linear(8, 2)
        torch.nn.init.zeros_(head.weight)
        torch.nn.init.zeros_(head.bias)
        out = classify([torch.randn(1, 4), torch.randn(1, 4)], head)
        assert out.tolist() == [[0.0, 0.0]]

    def test_selector(self):
        head = torch.nn.Linear(8, 2, bias=True)
        with torch.no_grad():
            head.weight.zero_()
            head.bias.zero_()
            head.weight[0, 0] = head.weight[1, 1] = 1.0
        e1 = torch.tensor([[3.0, -2.0, 5.0, 7.0]])
        assert classify([e1, torch.randn(1, 4)], head).tolist() == [[3.0, -2.0]]

    def test_swap_with_permuted_columns(self):
        torch.manual_seed(1)
        head = torch.nn.Linear(8, 2)
        swapped = torch.nn.Linear(8, 2)
        with torch.no_grad():
            swapped.weight.copy_(torch.cat([head.weight[:, 4:], head.weight[:, :4]], dim=1))
            swapped.bias.copy_(head.bias)
        e1, e2 = torch.randn(3, 4), torch.randn(3, 4)
        torch.testing.assert_close(classify([e2, e1], swapped), classify([e1, e2], head))

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            classify([torch.randn(1, 4), torch.randn(1, 3)], torch.nn.Linear(8, 2))


class TestScore:
    def test_values(self):
        assert score(torch.tensor([0.0, 0.0])).item() == 0.0
        assert score(torch.tensor([-1.0, 3.0])).item() == 4.0

    def test_shift_invariant(self):
        logits = torch.randn(10, 2, dtype=torch.float64)
        torch.testing.assert_close(score(logits + 7.25), score(logits))


MODES = list(itertools.product(["concat", "cnn_gate", "se_gate"], ["frequency", "channel", "none"], [1, 4, 10]))


@pytest.mark.parametrize("fusion,split,k", MODES)
def test_full_factorial_shapes(fusion, split, k):
    torch.manual_seed(0)
    model = Detector(fusion=fusion, split=split, k=k).eval()
    with torch.no_grad():
        logits, mid = model(random_mel(1), return_intermediates=True)
    assert logits.shape == (1, 2) and torch.isfinite(logits).all()
    assert (mid["grid"].H, mid["grid"].W) == (8, 24)
    assert mid["fused"].tokens.shape == (1, 192, 64)
    if split == "channel":
        assert [p.dim for p in mid["parts"]] == [32, 32]
    elif split == "frequency":
        assert [(p.H, p.W) for p in mid["parts"]] == [(4, 24), (4, 24)]
    else:
        assert len(mid["parts"]) == 1
    if fusion == "concat":
        assert mid["fusion_weights"] is None
    else:
        assert mid["fusion_weights"].shape == (1, k)


def test_branch_independence_under_frequency_split():
    torch.manual_seed(0)
    model = Detector(split="frequency").eval()
    g = grid()
    low, high = split_frequency(g)
    zeroed = g.tokens.clone()
    zeroed[:, : low.tokens.shape[1]] = 0
    low0, high0 = split_frequency(TokenGrid(zeroed, 8, 24))
    with torch.no_grad():
        assert torch.equal(model.branches[1](high0), model.branches[1](high))
        assert not torch.equal(model.branches[0](low0), model.branches[0](low))


@pytest.mark.parametrize("fusion,split", [("se_gate", "channel"), ("cnn_gate", "frequency"), ("concat", "none")])
def test_every_group_receives_gradient(fusion, split):
    torch.manual_seed(0)
    model = Detector(fusion=fusion, split=split, k=4)
    loss = weighted_cross_entropy(model(random_mel(2)), torch.tensor([0, 1]), ClassWeights())
    loss.backward()
    groups = model.parameter_groups()
    expected = {"encoder", "gate", "head", "branch0"} | ({"branch1"} if split != "none" else set())
    assert set(groups) == expected
    for name, params in groups.items():
        norm = sum(float(p.grad.norm()) ** 2 for _, p in params if p.grad is not None)
        assert norm > 0, name


def sampled_model_gradients(fusion, split, per_group=8, seed=0, step=1e-4):
    torch.manual_seed(seed)
    model = Detector(
        n_mels=32, max_frames=64, dim=16, depth=3, heads=2, fusion=fusion, k=2,
        split=split, branch_dim=8, branch_layers=1,
    ).double()
    mel = random_mel(2, frames=64, n_mels=32, dtype=torch.float64, seed=seed)
    labels = torch.tensor([0, 1])

    def loss():
        return weighted_cross_entropy(model(mel), labels, ClassWeights())

    rng = np.random.default_rng(seed)
    picked = []
    for name, params in model.parameter_groups().items():
        for i in rng.choice(len(params), per_group, replace=True):
            picked.append((f"{name}:{params[i][0]}", params[i][1]))
    return finite_difference_check(model, loss, picked, step=step, seed=seed)


@pytest.mark.parametrize("fusion,split", [("se_gate", "channel"), ("cnn_gate", "frequency")])
def test_model_gradients_match_finite_differences(fusion, split):
    results = sampled_model_gradients(fusion, split)
    assert len(results) >= 32
    bad = [r for r in results if r[-1] >= 1e-3]
    assert not bad, bad


def test_cnn_gate_kink_entries_converge_at_smaller_step():
    # at step 1e-4 some conv biases straddle a ReLU kink; the analytic value is
    # the one-sided limit, so shrinking the step must close the gap
    coarse = sampled_model_gradients("cnn_gate", "frequency", seed=3)
    fine = sampled_model_gradients("cnn_gate", "frequency", seed=3, step=1e-6)
    flagged = [i for i, r in enumerate(coarse) if r[-1] >= 1e-3]
    assert flagged
    assert all("convs" in coarse[i][0] for i in flagged)
    assert all(fine[i][-1] < 1e-3 for i in flagged)
