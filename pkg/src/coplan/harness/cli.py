"""Command-line entry point.

Commands:
  gen-data   generate a synthetic driving dataset directory
  train      run one training stage and write a checkpoint directory
  eval       evaluate a checkpoint on a dataset (planning L2 / collision / latency)
  ablate     sweep one axis (rounds/horizon/tokens/coupling/components)
  latency    wall-clock single-episode inference latency for a checkpoint
  report     aggregate a run directory's CSVs into a markdown summary
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from ..training import DeskDataset, run_stage
from ..synthworld import generate_dataset
from .ablation import AXES, run_ablation
from .config import (
    CONFIG_FILE,
    PROFILES,
    build_models,
    config_fingerprint,
    load_config,
    load_planner,
    save_config,
)
from .metrics import measure_latency, write_metrics
from .pipeline import evaluate_checkpoint
from .report import write_report

_READ_PATHS = {
    "gen-data": (),
    "train": ("data", "ckpt_in"),
    "eval": ("ckpt", "data"),
    "ablate": ("data", "eval_data"),
    "latency": ("ckpt", "data"),
    "report": ("run_dir",),
}


@dataclass(frozen=True)
class RunConfig:
    """One parsed CLI invocation; validation enforces that every referenced
    input path exists and that data generation / training carry a seed."""

    command: str
    seed: int | None = None
    episodes: int | None = None
    stage: int | None = None
    rounds: int | None = None
    horizon: int | None = None
    trials: int = 10
    axis: str | None = None
    grid: str | None = None
    seeds: tuple[int, ...] = (0,)
    no_world_to_action: bool = False
    no_action_to_world: bool = False
    prompt_refine: bool = False
    config: str | None = None
    overrides: tuple[str, ...] = ()
    data: Path | None = None
    eval_data: Path | None = None
    ckpt: Path | None = None
    ckpt_in: Path | None = None
    out: Path | None = None
    run_dir: Path | None = None
    work_dir: Path | None = None

    def validate(self) -> None:
        if self.command in ("gen-data",) and self.seed is None:
            raise ValueError(f"{self.command} requires --seed")
        for attr in _READ_PATHS[self.command]:
            path = getattr(self, attr)
            if path is not None and not Path(path).exists():
                flag = "--" + attr.replace("_", "-").replace("run-dir", "dir")
                raise FileNotFoundError(f"{flag}: no such path {path}")
        if (
            self.config is not None
            and self.config not in PROFILES
            and not Path(self.config).exists()
        ):
            raise FileNotFoundError(f"--config: no such profile or file {self.config}")


def _effective_config(rc: RunConfig):
    """Load the experiment config with CLI overrides (flags win over files)."""
    overrides = list(rc.overrides)
    if rc.seed is not None:
        overrides.append(f"seed={rc.seed}")
    return load_config(rc.config, overrides=overrides)


def _eval_section(cfg_eval, rc: RunConfig):
    """Apply eval-time CLI flags onto a checkpoint's eval config."""
    updates = {}
    if rc.rounds is not None:
        updates["rounds"] = rc.rounds
    if rc.horizon is not None:
        updates["t_w"] = rc.horizon
    if rc.no_world_to_action:
        updates["world_to_action"] = False
    if rc.no_action_to_world:
        updates["action_to_world"] = False
    if rc.prompt_refine:
        updates["mode"] = "refine_prompt"
    return replace(cfg_eval, **updates) if updates else cfg_eval


def _cmd_gen_data(rc: RunConfig) -> int:
    out = generate_dataset(rc.out, rc.episodes, rc.seed)
    print(f"wrote {rc.episodes} episodes to {out}")
    return 0


def _cmd_train(rc: RunConfig) -> int:
    cfg = _effective_config(rc)
    stage_cfg = getattr(cfg, f"stage{rc.stage}")
    dataset = DeskDataset(rc.data, cfg.render)
    models = build_models(cfg.model)
    manifest = run_stage(stage_cfg, models, dataset, rc.out, ckpt_in=rc.ckpt_in)
    save_config(cfg, Path(rc.out) / CONFIG_FILE)
    m = manifest["metrics"]
    print(
        f"stage {rc.stage}: holdout loss {m['holdout_loss_init']:.6f} -> "
        f"{m['holdout_loss_final']:.6f} "
        f"({m['train_steps']} steps, {m['train_seconds']:.1f}s) -> {rc.out}"
    )
    return 0


def _cmd_eval(rc: RunConfig) -> int:
    cfg = load_config(Path(rc.ckpt) / CONFIG_FILE)
    section = _eval_section(cfg.eval, rc)
    dataset = DeskDataset(rc.data, cfg.render)
    record = evaluate_checkpoint(
        rc.ckpt,
        dataset,
        eval_override=section,
        fingerprint=config_fingerprint(replace(cfg, eval=section)),
    )
    for field in dataclasses.fields(record):
        print(f"{field.name}: {getattr(record, field.name)}")
    if rc.out is not None:
        write_metrics(rc.out, [record])
        print(f"wrote {rc.out}")
    return 0


def _cmd_ablate(rc: RunConfig) -> int:
    cfg = _effective_config(rc)
    dataset = DeskDataset(rc.data, cfg.render)
    eval_ds = DeskDataset(rc.eval_data, cfg.render) if rc.eval_data else None
    result = run_ablation(
        rc.axis,
        rc.grid,
        cfg,
        dataset,
        rc.out,
        eval_dataset=eval_ds,
        seeds=rc.seeds,
        work_dir=rc.work_dir,
    )
    print(f"wrote {result['csv']}")
    for p in result["plots"]:
        print(f"wrote {p}")
    return 0


def _cmd_latency(rc: RunConfig) -> int:
    models, cfg, _ = load_planner(rc.ckpt)
    icfg = _eval_section(cfg.eval, rc).interaction()
    dataset = DeskDataset(rc.data, cfg.render)
    stats = measure_latency(
        models, dataset, icfg, trials=rc.trials, seed=cfg.seed
    )
    for key in ("median_ms", "mean_ms", "min_ms", "max_ms", "trials"):
        print(f"{key}: {stats[key]}")
    return 0


def _cmd_report(rc: RunConfig) -> int:
    path = write_report(rc.run_dir, out_path=rc.out)
    print(f"wrote {path}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "latency": _cmd_latency,
    "report": _cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coplan", description="Interactive driving planner toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument(
            "--config",
            default=None,
            help=f"profile name {sorted(PROFILES)} or a YAML patch file",
        )
        p.add_argument(
            "-o",
            "--override",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="dotted config override, e.g. stage4.epochs=5",
        )

    def add_eval_flags(p):
        p.add_argument("--rounds", type=int, default=None, help="refinement rounds K")
        p.add_argument(
            "--horizon", type=int, default=None, help="rollout horizon T_w in frames"
        )
        p.add_argument("--no-world-to-action", action="store_true")
        p.add_argument("--no-action-to-world", action="store_true")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, required=True, choices=(1, 2, 3, 4))
    add_config_args(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="checkpoint directory")
    p.add_argument(
        "--ckpt-in", type=Path, default=None, help="previous stage's checkpoint"
    )
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    add_eval_flags(p)
    p.add_argument("--prompt-refine", action="store_true")
    p.add_argument("--out", type=Path, default=None, help="metrics CSV to write")

    p = sub.add_parser("ablate", help="sweep one configuration axis")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument(
        "--grid", default=None, help="comma-separated grid values, e.g. 1,2,4"
    )
    add_config_args(p)
    p.add_argument("--data", type=Path, required=True, help="training dataset")
    p.add_argument(
        "--eval-data", type=Path, default=None, help="separate evaluation dataset"
    )
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument(
        "--work-dir", type=Path, default=None, help="checkpoint cache directory"
    )

    p = sub.add_parser("latency", help="single-episode inference latency")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--trials", type=int, default=10)
    add_eval_flags(p)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--dir", dest="run_dir", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="report path")

    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values = {k: v for k, v in vars(args).items() if k in known}
    if "overrides" in values:
        values["overrides"] = tuple(values["overrides"])
    if isinstance(values.get("seeds"), str):
        try:
            values["seeds"] = tuple(int(s) for s in values["seeds"].split(",") if s)
        except ValueError:
            raise ValueError(f"--seeds must be comma-separated ints, got {values['seeds']!r}")
    return RunConfig(**values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = _run_config(args)
        rc.validate()
        return _HANDLERS[rc.command](rc)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
