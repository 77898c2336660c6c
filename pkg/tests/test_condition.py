"""Tests for the command/speed condition encoding."""

import pytest
import torch

from coplan.models.condition import (
    N_COMMANDS,
    ConditionConfig,
    ConditionEncoder,
    status_features,
)


class TestConditionEncoder:
    def test_shapes(self):
        enc = ConditionEncoder(ConditionConfig(d=16))
        out = enc(torch.tensor([0, 3]), torch.tensor([1.0, 4.5]))
        assert out.shape == (2, 2, 16)

    def test_first_token_is_command_embedding(self):
        enc = ConditionEncoder(ConditionConfig(d=16))
        out = enc(torch.tensor([2]), torch.tensor([1.0]))
        assert torch.equal(out[0, 0], enc.cmd_emb.weight[2])

    def test_speed_token_is_linear_in_speed(self):
        enc = ConditionEncoder(ConditionConfig(d=16))
        s1 = enc(torch.tensor([0]), torch.tensor([1.0]))[0, 1]
        s2 = enc(torch.tensor([0]), torch.tensor([2.0]))[0, 1]
        s3 = enc(torch.tensor([0]), torch.tensor([3.0]))[0, 1]
        assert torch.allclose(s3 - s2, s2 - s1, atol=1e-6)

    def test_command_out_of_range(self):
        enc = ConditionEncoder(ConditionConfig(d=16))
        with pytest.raises(ValueError, match="out of range"):
            enc(torch.tensor([N_COMMANDS]), torch.tensor([1.0]))
        with pytest.raises(ValueError, match="out of range"):
            enc(torch.tensor([-1]), torch.tensor([1.0]))

    def test_shape_mismatch(self):
        enc = ConditionEncoder(ConditionConfig(d=16))
        with pytest.raises(ValueError, match="matching"):
            enc(torch.tensor([0, 1]), torch.tensor([1.0]))


class TestStatusFeatures:
    def test_hand_computed(self):
        out = status_features(torch.tensor([2]), torch.tensor([3.5]))
        assert torch.equal(out, torch.tensor([[3.5, 0.0, 0.0, 1.0, 0.0]]))

    def test_shape(self):
        out = status_features(torch.tensor([0, 1, 3]), torch.tensor([1.0, 2.0, 3.0]))
        assert out.shape == (3, 1 + N_COMMANDS)
        assert torch.all(out[:, 1:].sum(dim=1) == 1)
