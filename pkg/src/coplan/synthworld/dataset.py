"""Episode dataset serialization.

A dataset directory holds manifest.json plus one binary record per episode
(ep_00000.bin, ...). Records are little-endian and fixed-layout, so a
generation run is byte-reproducible from (seed, episode count, config).

Record layout (version 1), all little-endian:

    magic           4s   = b"CPW1"
    command         u32
    n_snapshots     u32
    n_agents        u32  (constant across snapshots; ids/order constant)
    n_waypoints     u32
    horizon         u32
    half_width      f32
    dt              f32
    waypoints       n_waypoints * 2 f32
    per snapshot:   time f32; ego (x, y, yaw, v) 4*f32;
                    per agent: id u32, (x, y, yaw, v, radius) 5*f32
    expert poses    horizon * 3 f32
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import ScenarioConfig, sample_episode
from .types import (
    DT,
    AgentState,
    Command,
    EgoState,
    Episode,
    RoadSpec,
    Trajectory,
    WorldSnapshot,
)

MAGIC = b"CPW1"
SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class DatasetConfig:
    n_episodes: int
    seed: int
    scenario: ScenarioConfig = dataclasses.field(default_factory=ScenarioConfig)


def _config_dict(cfg: ScenarioConfig) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def episode_filename(index: int) -> str:
    return f"ep_{index:05d}.bin"


def encode_episode(ep: Episode) -> bytes:
    """Serialize one episode to the fixed little-endian layout."""
    road = ep.snapshots[0].road
    n_agents = len(ep.snapshots[0].agents)
    ids0 = [a.agent_id for a in ep.snapshots[0].agents]
    for snap in ep.snapshots:
        if len(snap.agents) != n_agents or [a.agent_id for a in snap.agents] != ids0:
            raise ValueError("agent roster must be constant across snapshots")
    wps = np.ascontiguousarray(road.centerline, dtype="<f4")
    out = [
        struct.pack(
            "<4sIIIII2f",
            MAGIC,
            int(ep.command),
            len(ep.snapshots),
            n_agents,
            wps.shape[0],
            ep.expert.horizon,
            float(road.half_width),
            float(ep.expert.dt),
        ),
        wps.tobytes(),
    ]
    for snap in ep.snapshots:
        out.append(
            struct.pack("<5f", snap.time, snap.ego.x, snap.ego.y, snap.ego.yaw, snap.ego.v)
        )
        for a in snap.agents:
            out.append(struct.pack("<I5f", a.agent_id, a.x, a.y, a.yaw, a.v, a.radius))
    out.append(np.ascontiguousarray(ep.expert.poses, dtype="<f4").tobytes())
    return b"".join(out)


def decode_episode(blob: bytes, source: str = "<bytes>") -> Episode:
    """Parse one record; raises ValueError naming the source on corruption."""
    header_fmt = "<4sIIIII2f"
    header_size = struct.calcsize(header_fmt)
    if len(blob) < header_size:
        raise ValueError(f"{source}: truncated record header")
    magic, command, n_snap, n_agents, n_wp, horizon, half_width, dt = struct.unpack_from(
        header_fmt, blob, 0
    )
    if magic != MAGIC:
        raise ValueError(f"{source}: bad magic {magic!r}")
    offset = header_size
    expected = (
        header_size
        + n_wp * 2 * 4
        + n_snap * (5 * 4 + n_agents * 6 * 4)
        + horizon * 3 * 4
    )
    if len(blob) != expected:
        raise ValueError(f"{source}: size {len(blob)} != expected {expected}")

    wps = np.frombuffer(blob, dtype="<f4", count=n_wp * 2, offset=offset).reshape(n_wp, 2)
    offset += n_wp * 2 * 4
    road = RoadSpec(centerline=wps.astype(np.float64), half_width=float(half_width))

    snapshots = []
    for _ in range(n_snap):
        time, ex, ey, eyaw, ev = struct.unpack_from("<5f", blob, offset)
        offset += 5 * 4
        agents = []
        for _ in range(n_agents):
            aid, ax, ay, ayaw, av, ar = struct.unpack_from("<I5f", blob, offset)
            offset += 6 * 4
            agents.append(
                AgentState(agent_id=int(aid), x=ax, y=ay, yaw=ayaw, v=av, radius=ar)
            )
        snapshots.append(
            WorldSnapshot(
                time=float(np.float32(time)),
                ego=EgoState(x=ex, y=ey, yaw=eyaw, v=ev),
                agents=tuple(agents),
                road=road,
            )
        )
    poses = np.frombuffer(blob, dtype="<f4", count=horizon * 3, offset=offset)
    expert = Trajectory(poses=poses.reshape(horizon, 3).astype(np.float64), dt=float(dt))
    return Episode(snapshots=tuple(snapshots), command=Command(command), expert=expert)


def generate_dataset(
    out_dir: str | Path,
    n_episodes: int,
    seed: int,
    scenario: ScenarioConfig | None = None,
) -> Path:
    """Generate a dataset directory; byte-identical for identical arguments.

    Episode i is drawn from its own stream np.random.default_rng([seed, i]),
    so records are independent of generation order and batch size.
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    scenario = scenario or ScenarioConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(n_episodes):
        rng = np.random.default_rng([seed, i])
        ep = sample_episode(rng, scenario)
        name = episode_filename(i)
        (out / name).write_bytes(encode_episode(ep))
        files.append(name)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "episode_count": n_episodes,
        "seed": seed,
        "dt": DT,
        "config": _config_dict(scenario),
        "files": files,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out


def read_manifest(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {dataset_dir}")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"{path}: schema_version {manifest.get('schema_version')} "
            f"!= supported {SCHEMA_VERSION}"
        )
    return manifest


def load_episode_record(dataset_dir: str | Path, index: int) -> Episode:
    path = Path(dataset_dir) / episode_filename(index)
    if not path.exists():
        raise FileNotFoundError(f"missing episode record {path}")
    return decode_episode(path.read_bytes(), source=str(path))


def load_dataset(dataset_dir: str | Path) -> tuple[list[Episode], dict]:
    """Load all episodes; validates manifest/file agreement."""
    manifest = read_manifest(dataset_dir)
    files = manifest["files"]
    if len(files) != manifest["episode_count"]:
        raise ValueError(
            f"{dataset_dir}: manifest lists {len(files)} files but "
            f"episode_count={manifest['episode_count']}"
        )
    episodes = []
    for name in files:
        path = Path(dataset_dir) / name
        if not path.exists():
            raise FileNotFoundError(f"missing episode record {path}")
        episodes.append(decode_episode(path.read_bytes(), source=str(path)))
    return episodes, manifest
