"""Tests for the multi-mode action denoiser and its imitation loss."""

import math

import numpy as np
import pytest
import torch

from coplan.models.denoiser import (
    ActionDenoiser,
    AdaLNZeroBlock,
    DenoiserConfig,
    Role,
    planning_loss,
    wrap_angle_tensor,
)
from oracles import planning_loss_reference

TINY = DenoiserConfig(
    d=32,
    depth=1,
    n_heads=2,
    mlp_ratio=2.0,
    modes=3,
    horizon=4,
    d_latent=16,
    m_tokens=4,
    d_cond=32,
    status_dim=5,
    k_max=8,
    t_w_max=8,
    trained_rounds=4,
)


def _randomize(module: torch.nn.Module, seed: int = 0) -> None:
    """Overwrite every parameter with noise (defeats zero/identity inits)."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * 0.2)


def _inputs(b=2, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)

    def rnd(*shape):
        return torch.randn(*shape, generator=g, dtype=dtype)

    noisy = rnd(b, TINY.modes, TINY.horizon, 3)
    t = torch.rand(b, generator=g, dtype=dtype) * 999
    status = rnd(b, TINY.status_dim)
    cond = rnd(b, 2, TINY.d_cond)
    world0 = rnd(b, TINY.m_tokens, TINY.d_latent)
    world_roll = rnd(b, 5, TINY.m_tokens, TINY.d_latent)
    prev = rnd(b, TINY.modes, TINY.horizon, 3)
    return noisy, t, status, cond, world0, world_roll, prev


class TestAdaLNZeroBlock:
    def test_identity_at_init_fp32(self):
        torch.manual_seed(0)
        blk = AdaLNZeroBlock(d=32, n_heads=2)
        x = torch.randn(2, 7, 32)
        ctx = torch.randn(2, 5, 32)
        cond = torch.randn(2, 32)
        out = blk(x, context=ctx, cond_vec=cond)
        assert torch.max(torch.abs(out - x)) <= 1e-6

    def test_identity_at_init_fp64(self):
        torch.manual_seed(1)
        blk = AdaLNZeroBlock(d=32, n_heads=2).double()
        x = torch.randn(2, 7, 32, dtype=torch.float64)
        ctx = torch.randn(2, 5, 32, dtype=torch.float64)
        cond = torch.randn(2, 32, dtype=torch.float64)
        out = blk(x, context=ctx, cond_vec=cond)
        assert torch.max(torch.abs(out - x)) <= 1e-12

    def test_identity_is_exact(self):
        # Zero gates multiply finite branch outputs, so the residual update
        # is exactly +0.0 and the block returns its input bitwise.
        torch.manual_seed(2)
        blk = AdaLNZeroBlock(d=32, n_heads=2)
        x = torch.randn(3, 4, 32)
        out = blk(x, context=torch.randn(3, 6, 32), cond_vec=torch.randn(3, 32))
        assert torch.equal(out, x)

    def test_surgery_matches_plain_prenorm_block(self):
        # With gates=1, scales=1, shifts=0 the block must reduce to a plain
        # pre-norm transformer block built from its own submodules.
        torch.manual_seed(3)
        blk = AdaLNZeroBlock(d=32, n_heads=2).double()
        _randomize(blk, seed=3)
        with torch.no_grad():
            blk.modulation[1].weight.zero_()
            bias = torch.zeros(9, 32, dtype=torch.float64)
            bias[1] = bias[4] = bias[7] = 1.0  # scales
            bias[2] = bias[5] = bias[8] = 1.0  # gates
            blk.modulation[1].bias.copy_(bias.reshape(-1))

        x = torch.randn(2, 6, 32, dtype=torch.float64)
        ctx = torch.randn(2, 5, 32, dtype=torch.float64)
        cond = torch.randn(2, 32, dtype=torch.float64)
        out = blk(x, context=ctx, cond_vec=cond)

        y = x + blk.attn(blk.norm1(x))
        y = y + blk.cross(blk.norm2(y), context=blk.norm_ctx(ctx))
        y = y + blk.mlp(blk.norm3(y))
        assert torch.allclose(out, y, atol=1e-12)

    def test_gate_rows_receive_gradient_at_init(self):
        # At init the branch output is gated to zero, so only the gate rows
        # of the modulation bias see gradient -- that is what un-freezes the
        # block during training.
        torch.manual_seed(4)
        blk = AdaLNZeroBlock(d=16, n_heads=2)
        x = torch.randn(2, 5, 16, requires_grad=True)
        out = blk(x, context=torch.randn(2, 4, 16), cond_vec=torch.randn(2, 16))
        out.pow(2).sum().backward()

        bias_grad = blk.modulation[1].bias.grad.reshape(9, 16)
        gate_rows = bias_grad[[2, 5, 8]]
        other_rows = bias_grad[[0, 1, 3, 4, 6, 7]]
        assert torch.any(gate_rows != 0)
        assert torch.all(other_rows == 0)
        # Identity path: input gradient equals output gradient.
        assert torch.allclose(x.grad, 2 * out.detach())

    def test_one_step_breaks_identity(self):
        torch.manual_seed(5)
        blk = AdaLNZeroBlock(d=16, n_heads=2)
        x = torch.randn(2, 5, 16)
        ctx = torch.randn(2, 4, 16)
        cond = torch.randn(2, 16)
        opt = torch.optim.SGD(blk.parameters(), lr=0.1)
        loss = (blk(x, context=ctx, cond_vec=cond) - 1.0).pow(2).mean()
        loss.backward()
        opt.step()
        out = blk(x, context=ctx, cond_vec=cond)
        assert not torch.allclose(out, x)


class TestDenoiserForward:
    def test_output_shapes(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, world0, _, _ = _inputs()
        poses, scores = dn(
            noisy, t, role=Role.INIT, status=status, cond_tokens=cond, world=world0
        )
        assert poses.shape == (2, TINY.modes, TINY.horizon, 3)
        assert scores.shape == (2, TINY.modes)

    def test_refine_accepts_rollout_and_prev(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, _, world_roll, prev = _inputs()
        poses, scores = dn(
            noisy,
            t,
            role=Role.REFINE,
            status=status,
            cond_tokens=cond,
            world=world_roll,
            prev_action=prev,
            round_index=1,
        )
        assert poses.shape == (2, TINY.modes, TINY.horizon, 3)
        assert torch.all(torch.isfinite(poses)) and torch.all(torch.isfinite(scores))

    def test_init_and_proposal_share_all_weights_but_the_role_row(self):
        # INIT and PROPOSAL follow the identical code path; forcing their
        # role embeddings equal must make the outputs bit-identical, proving
        # the roles share every other weight.
        dn = ActionDenoiser(TINY)
        _randomize(dn, seed=21)
        noisy, t, status, cond, world0, _, _ = _inputs()

        def run(role):
            return dn(
                noisy, t, role=role, status=status, cond_tokens=cond, world=world0
            )[0]

        assert not torch.allclose(run(Role.INIT), run(Role.PROPOSAL))
        with torch.no_grad():
            dn.role_emb.weight[int(Role.PROPOSAL)] = dn.role_emb.weight[int(Role.INIT)]
        assert torch.equal(run(Role.INIT), run(Role.PROPOSAL))

    def test_roles_differ(self):
        dn = ActionDenoiser(TINY)
        _randomize(dn, seed=7)
        noisy, t, status, cond, _, world_roll, prev = _inputs()
        init_out, _ = dn(
            noisy,
            t,
            role=Role.INIT,
            status=status,
            cond_tokens=cond,
            world=world_roll,
            prev_action=prev,
        )
        ref_out, _ = dn(
            noisy,
            t,
            role=Role.REFINE,
            status=status,
            cond_tokens=cond,
            world=world_roll,
            prev_action=prev,
        )
        assert not torch.allclose(init_out, ref_out)

    def test_prev_hypothesis_changes_output(self):
        dn = ActionDenoiser(TINY)
        _randomize(dn, seed=8)
        noisy, t, status, cond, world0, _, prev = _inputs()
        with_prev, _ = dn(
            noisy,
            t,
            role=Role.INIT,
            status=status,
            cond_tokens=cond,
            world=world0,
            prev_action=prev,
        )
        without, _ = dn(
            noisy, t, role=Role.INIT, status=status, cond_tokens=cond, world=world0
        )
        assert not torch.allclose(with_prev, without)

    def test_fewer_prompt_modes_allowed(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, world0, _, prev = _inputs()
        out, _ = dn(
            noisy,
            t,
            role=Role.INIT,
            status=status,
            cond_tokens=cond,
            world=world0,
            prev_action=prev[:, :1],
        )
        assert out.shape == (2, TINY.modes, TINY.horizon, 3)


class TestRoundEmbedding:
    def test_rounds_beyond_trained_reuse_last(self):
        dn = ActionDenoiser(TINY)
        _randomize(dn, seed=9)
        noisy, t, status, cond, _, world_roll, prev = _inputs()

        def run(r):
            return dn(
                noisy,
                t,
                role=Role.REFINE,
                status=status,
                cond_tokens=cond,
                world=world_roll,
                prev_action=prev,
                round_index=r,
            )[0]

        last_trained = run(TINY.trained_rounds - 1)
        for r in (TINY.trained_rounds, TINY.k_max + 5, 100):
            assert torch.equal(run(r), last_trained)

    def test_trained_rounds_distinct(self):
        dn = ActionDenoiser(TINY)
        _randomize(dn, seed=10)
        noisy, t, status, cond, _, world_roll, prev = _inputs()

        def run(r):
            return dn(
                noisy,
                t,
                role=Role.REFINE,
                status=status,
                cond_tokens=cond,
                world=world_roll,
                prev_action=prev,
                round_index=r,
            )[0]

        assert not torch.allclose(run(0), run(1))


class TestValidation:
    def test_bad_noisy_shape(self):
        dn = ActionDenoiser(TINY)
        _, t, status, cond, world0, _, _ = _inputs()
        with pytest.raises(ValueError, match="noisy"):
            dn(
                torch.zeros(2, TINY.modes, TINY.horizon + 1, 3),
                t,
                role=Role.INIT,
                status=status,
                cond_tokens=cond,
                world=world0,
            )

    def test_refine_requires_prev(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, _, world_roll, _ = _inputs()
        with pytest.raises(ValueError, match="previous hypothesis"):
            dn(
                noisy,
                t,
                role=Role.REFINE,
                status=status,
                cond_tokens=cond,
                world=world_roll,
            )

    def test_refine_accepts_current_latents(self):
        # When the world->action coupling is severed, REFINE conditions on
        # the current latents instead of a rollout.
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, world0, _, prev = _inputs()
        out, _ = dn(
            noisy,
            t,
            role=Role.REFINE,
            status=status,
            cond_tokens=cond,
            world=world0,
            prev_action=prev,
        )
        assert out.shape == (2, TINY.modes, TINY.horizon, 3)

    def test_too_many_prompt_modes(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, world0, _, _ = _inputs()
        with pytest.raises(ValueError, match="modes"):
            dn(
                noisy,
                t,
                role=Role.INIT,
                status=status,
                cond_tokens=cond,
                world=world0,
                prev_action=torch.zeros(2, TINY.modes + 1, TINY.horizon, 3),
            )

    def test_world_too_long(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, _, _, prev = _inputs()
        with pytest.raises(ValueError, match="t_w_max"):
            dn(
                noisy,
                t,
                role=Role.REFINE,
                status=status,
                cond_tokens=cond,
                world=torch.zeros(2, TINY.t_w_max + 1, TINY.m_tokens, TINY.d_latent),
                prev_action=prev,
            )

    def test_world_wrong_width(self):
        dn = ActionDenoiser(TINY)
        noisy, t, status, cond, _, _, _ = _inputs()
        with pytest.raises(ValueError, match="world"):
            dn(
                noisy,
                t,
                role=Role.INIT,
                status=status,
                cond_tokens=cond,
                world=torch.zeros(2, TINY.m_tokens + 1, TINY.d_latent),
            )


class TestWrapAngle:
    def test_period_multiples_vanish(self):
        x = torch.tensor([0.0, 2.0, -2.0, 4.0, -6.0])
        assert torch.allclose(wrap_angle_tensor(x, period=2.0), torch.zeros(5))

    def test_half_open_interval(self):
        out = wrap_angle_tensor(torch.tensor([1.0, -1.0, 3.0, -3.0]), period=2.0)
        # Wraps to (-1, 1]: +1 stays, -1 maps to +1.
        assert torch.allclose(out, torch.tensor([1.0, 1.0, 1.0, 1.0]))

    def test_small_values_unchanged(self):
        x = torch.tensor([0.3, -0.7, 0.99, -0.99])
        assert torch.allclose(wrap_angle_tensor(x, period=2.0), x)

    def test_matches_math_remainder(self):
        rng = np.random.default_rng(0)
        vals = rng.uniform(-10, 10, size=200)
        got = wrap_angle_tensor(torch.tensor(vals), period=2 * math.pi).numpy()
        want = np.array([math.remainder(v, 2 * math.pi) for v in vals])
        # math.remainder returns [-pi, pi]; ours moves -pi to +pi.
        want = np.where(want <= -math.pi, want + 2 * math.pi, want)
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestPlanningLoss:
    def test_uniform_scores_give_log_k(self):
        b, k, h = 4, 6, 8
        g = torch.Generator().manual_seed(0)
        pose = torch.randn(b, k, h, 3, generator=g)
        expert = torch.randn(b, h, 3, generator=g)
        _, parts = planning_loss(pose, torch.zeros(b, k), expert)
        assert parts["ce"] == pytest.approx(math.log(6), abs=1e-6)

    def test_perfect_prediction_zero_loss(self):
        b, k, h = 2, 3, 8
        g = torch.Generator().manual_seed(1)
        expert = torch.randn(b, h, 3, generator=g)
        pose = torch.randn(b, k, h, 3, generator=g) + 5.0
        pose[:, 1] = expert  # mode 1 is exact
        scores = torch.full((b, k), -20.0)
        scores[:, 1] = 20.0
        total, parts = planning_loss(pose, scores, expert)
        assert parts["pos_l1"] == pytest.approx(0.0, abs=1e-7)
        assert parts["vel_l1"] == pytest.approx(0.0, abs=1e-7)
        assert parts["yaw_l1"] == pytest.approx(0.0, abs=1e-7)
        assert float(total) == pytest.approx(0.0, abs=1e-6)

    def test_hand_computed_single_mode(self):
        # One mode, two steps: pred (1,0) then (2,0); expert at the origin.
        # pos L1 = mean(1,0,2,0) = 0.75; finite-difference velocities are
        # (1,0) and (1,0) giving 0.5; yaw zero; CE over one mode is zero.
        pose = torch.tensor([[[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]]])
        expert = torch.zeros(1, 2, 3)
        total, parts = planning_loss(pose, torch.zeros(1, 1), expert)
        assert parts["ce"] == pytest.approx(0.0, abs=1e-7)
        assert parts["pos_l1"] == pytest.approx(0.75)
        assert parts["vel_l1"] == pytest.approx(0.5)
        assert float(total) == pytest.approx(1.0)

    def test_first_velocity_step_measured_from_origin(self):
        # A constant offset c contributes c to the first velocity step only.
        pose = torch.zeros(1, 1, 4, 3)
        pose[..., 0] += 2.0
        expert = torch.zeros(1, 4, 3)
        _, parts = planning_loss(pose, torch.zeros(1, 1), expert)
        # velocity terms: |2-0| once, then zeros -> mean over 4*2 entries.
        assert parts["vel_l1"] == pytest.approx(2.0 / 8.0)

    def test_yaw_wraps_with_period_two(self):
        # Normalized yaw has period 2 (units of pi): an error of exactly 2
        # is no error, an error of 1.5 wraps to -0.5.
        pose = torch.zeros(1, 1, 2, 3)
        pose[0, 0, 0, 2] = 2.0
        pose[0, 0, 1, 2] = 1.5
        expert = torch.zeros(1, 2, 3)
        _, parts = planning_loss(pose, torch.zeros(1, 1), expert)
        assert parts["yaw_l1"] == pytest.approx((0.0 + 0.5) / 2)

    def test_matches_reference_implementation(self):
        g = torch.Generator().manual_seed(2)
        for _ in range(5):
            b, k, h = 3, 4, 6
            pose = torch.randn(b, k, h, 3, generator=g, dtype=torch.float64)
            scores = torch.randn(b, k, generator=g, dtype=torch.float64)
            expert = torch.randn(b, h, 3, generator=g, dtype=torch.float64)
            total, _ = planning_loss(pose, scores, expert)
            want = planning_loss_reference(pose.numpy(), scores.numpy(), expert.numpy())
            assert float(total) == pytest.approx(want, rel=1e-10)

    def test_winner_selection_not_differentiated(self):
        # The winner index is chosen under no_grad; gradients flow only
        # through the selected mode's poses and the score logits.
        pose = torch.randn(2, 3, 4, 3, dtype=torch.float64, requires_grad=True)
        scores = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        expert = torch.randn(2, 4, 3, dtype=torch.float64)
        total, _ = planning_loss(pose, scores, expert)
        total.backward()
        assert scores.grad is not None and torch.any(scores.grad != 0)
        # Exactly one mode per sample carries pose gradient.
        per_mode = pose.grad.abs().sum(dim=(2, 3))
        assert torch.all((per_mode > 0).sum(dim=1) == 1)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="shape"):
            planning_loss(torch.zeros(1, 2, 4, 3), torch.zeros(1, 2), torch.zeros(1, 5, 3))
        with pytest.raises(ValueError, match="scores"):
            planning_loss(torch.zeros(1, 2, 4, 3), torch.zeros(1, 3), torch.zeros(1, 4, 3))


class TestGradients:
    def test_finite_difference_through_denoiser_and_loss(self):
        torch.manual_seed(6)
        dn = ActionDenoiser(TINY).double()
        _randomize(dn, seed=6)
        noisy, t, status, cond, _, world_roll, prev = _inputs(dtype=torch.float64)
        expert = torch.randn(2, TINY.horizon, 3, dtype=torch.float64) * 0.3

        def loss_fn():
            poses, scores = dn(
                noisy,
                t,
                role=Role.REFINE,
                status=status,
                cond_tokens=cond,
                world=world_roll,
                prev_action=prev,
                round_index=1,
            )
            total, _ = planning_loss(poses, scores, expert)
            return total

        dn.zero_grad()
        loss_fn().backward()
        checks = [
            (dn.pose_in.weight, (0, 0)),
            (dn.pose_in.weight, (17, 2)),
            (dn.world_proj.weight, (5, 3)),
            (dn.status_proj.weight, (11, 4)),
            (dn.blocks[0].modulation[1].weight, (40, 9)),
            (dn.score_out.weight, (0, 21)),
        ]
        eps = 1e-6
        for p, idx in checks:
            grad = float(p.grad[idx])
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + eps
                up = float(loss_fn())
                p[idx] = orig - eps
                down = float(loss_fn())
                p[idx] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - grad) <= 1e-3 * max(abs(fd), abs(grad), 1e-8), (
                f"param grad mismatch at {idx}: fd={fd}, autograd={grad}"
            )
