"""Rendered-window cache, planning batches, and split/batching utilities."""

import numpy as np
import pytest
import torch

from coplan.diffusion import normalize_poses
from coplan.geometry import to_ego_frame
from coplan.synthworld import RenderConfig, generate_dataset, render_observation
from coplan.synthworld.types import T_FUTURE, T_OBS
from coplan.training import (
    N_WINDOWS,
    DeskDataset,
    iter_batches,
    render_episode_windows,
    render_fingerprint,
    split_indices,
)
from coplan.training.data import load_render_cache

RENDER = RenderConfig(px=32)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_data") / "ds"
    generate_dataset(out, n_episodes=10, seed=123)
    return out


@pytest.fixture(scope="module")
def dataset(dataset_dir):
    return DeskDataset(dataset_dir, render_cfg=RENDER)


class TestFingerprint:
    def test_deterministic(self, dataset):
        a = render_fingerprint(RENDER, dataset.manifest)
        assert a == dataset.fingerprint
        assert len(a) == 64

    def test_sensitive_to_render_params(self, dataset):
        assert render_fingerprint(RenderConfig(px=64), dataset.manifest) != dataset.fingerprint

    def test_sensitive_to_dataset(self, dataset):
        other = dict(dataset.manifest, seed=dataset.manifest["seed"] + 1)
        assert render_fingerprint(RENDER, other) != dataset.fingerprint


class TestRenderWindows:
    def test_shapes_and_binary_values(self, dataset):
        frames = render_episode_windows(dataset.episodes[0], RENDER)
        assert frames.shape == (N_WINDOWS, T_OBS, RENDER.px, RENDER.px, 3)
        assert set(np.unique(frames)) <= {0.0, 1.0}

    def test_window_slices_snapshots(self, dataset):
        ep = dataset.episodes[1]
        frames = render_episode_windows(ep, RENDER)
        for j in (0, 3, T_FUTURE):
            direct = render_observation(list(ep.snapshots[j : j + T_OBS]), RENDER).grid
            assert np.array_equal(frames[j], direct)

    def test_windows_use_their_own_ego_frame(self, dataset):
        # The last frame of every window shows the ego at the grid center,
        # so consecutive windows differ unless the scene is static.
        ep = dataset.episodes[0]
        frames = render_episode_windows(ep, RENDER)
        center = frames[:, -1, RENDER.px // 2, RENDER.px // 2, 0]
        assert np.all(center == 1.0)


class TestDeskDataset:
    def test_len(self, dataset):
        assert len(dataset) == 10

    def test_cache_file_created_and_reused(self, dataset_dir, dataset):
        caches = list(dataset_dir.glob("render_cache_*.npz"))
        assert len(caches) == 1
        stamp = caches[0].stat().st_mtime_ns
        again = DeskDataset(dataset_dir, render_cfg=RENDER)
        assert caches[0].stat().st_mtime_ns == stamp
        idx = np.arange(len(dataset))
        assert torch.equal(again.observations(idx, 0), dataset.observations(idx, 0))

    def test_cache_rejects_wrong_fingerprint(self, dataset_dir, dataset):
        cache = next(dataset_dir.glob("render_cache_*.npz"))
        with pytest.raises(ValueError, match="fingerprint"):
            load_render_cache(cache, "0" * 64)

    def test_observations_round_trip_bits(self, dataset):
        idx = np.array([0, 3, 7])
        for window in (0, 4, 8):
            got = dataset.observations(idx, window)
            assert got.shape == (3, T_OBS, RENDER.px, RENDER.px, 3)
            assert got.dtype == torch.float32
            for row, ep_i in enumerate(idx):
                direct = render_episode_windows(dataset.episodes[ep_i], RENDER)[window]
                assert np.array_equal(got[row].numpy(), direct)

    def test_window_out_of_range(self, dataset):
        with pytest.raises(ValueError, match="window"):
            dataset.observations(np.array([0]), N_WINDOWS)

    def test_all_windows_matches_observations(self, dataset):
        idx = np.array([2, 5])
        wins = dataset.all_windows(idx)
        assert wins.shape == (2, N_WINDOWS, T_OBS, RENDER.px, RENDER.px, 3)
        for j in range(N_WINDOWS):
            assert torch.equal(wins[:, j], dataset.observations(idx, j))

    def test_planning_batch_targets(self, dataset):
        idx = np.array([1, 4, 6])
        batch = dataset.planning_batch(idx)
        assert batch.obs.shape == (3, T_OBS, RENDER.px, RENDER.px, 3)
        assert batch.command.dtype == torch.int64
        assert batch.speed.dtype == torch.float32
        assert batch.expert_norm.shape == (3, T_FUTURE, 3)
        for row, ep_i in enumerate(idx):
            ep = dataset.episodes[ep_i]
            assert int(batch.command[row]) == int(ep.command)
            assert float(batch.speed[row]) == pytest.approx(ep.current.ego.v)
            ego = to_ego_frame(ep.current.ego.pose(), ep.expert.poses)
            want = normalize_poses(torch.from_numpy(ego.astype(np.float32)))
            assert torch.allclose(batch.expert_norm[row], want, atol=1e-6)

    def test_expert_norm_in_range(self, dataset):
        assert np.all(np.abs(dataset.expert_norm) <= 1.0 + 1e-6)


class TestSplitIndices:
    def test_partition(self):
        train, hold = split_indices(20, 0.25, seed=5)
        assert len(hold) == 5
        assert len(train) == 15
        assert sorted(np.concatenate([train, hold]).tolist()) == list(range(20))

    def test_deterministic(self):
        assert np.array_equal(split_indices(50, 0.1, 7)[1], split_indices(50, 0.1, 7)[1])
        assert not np.array_equal(split_indices(50, 0.1, 7)[1], split_indices(50, 0.1, 8)[1])

    def test_sorted_outputs(self):
        train, hold = split_indices(30, 0.2, 1)
        assert np.all(np.diff(train) > 0)
        assert np.all(np.diff(hold) > 0)

    def test_at_least_one_each_side(self):
        train, hold = split_indices(2, 0.01, 0)
        assert len(hold) == 1 and len(train) == 1
        train, hold = split_indices(2, 0.99, 0)
        assert len(hold) == 1 and len(train) == 1

    def test_validation(self):
        with pytest.raises(ValueError):
            split_indices(10, 0.0, 0)
        with pytest.raises(ValueError):
            split_indices(10, 1.0, 0)
        with pytest.raises(ValueError):
            split_indices(1, 0.5, 0)


class TestIterBatches:
    def test_covers_once(self):
        idx = np.arange(17)
        batches = list(iter_batches(idx, 5, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [5, 5, 5, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(17))

    def test_shuffle_deterministic_via_rng(self):
        idx = np.arange(40)
        a = list(iter_batches(idx, 8, np.random.default_rng(3)))
        b = list(iter_batches(idx, 8, np.random.default_rng(3)))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        c = list(iter_batches(idx, 8, np.random.default_rng(4)))
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_no_shuffle_preserves_order(self):
        idx = np.array([4, 9, 2, 6])
        batches = list(iter_batches(idx, 3, np.random.default_rng(0), shuffle=False))
        assert np.array_equal(np.concatenate(batches), idx)

    def test_batch_size_validation(self):
        with pytest.raises(ValueError):
            list(iter_batches(np.arange(4), 0, np.random.default_rng(0)))
