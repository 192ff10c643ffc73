"""Line-delimited JSON persistence for trajectory datasets.

File layout::

    {"version": 1, "env": "mountaincar-mod", "action_repeat": 4, ...}
    {"steps": [[position, velocity, action, reward, behavior_prob], ...],
     "terminated": true}
    ...

The first line is the header; every following line is one trajectory.
"""

import json
from pathlib import Path
from typing import Any, Iterable

from safeeval.errors import DatasetError
from safeeval.models import Dataset, DatasetMeta, EnvConfig, State, Step, Trajectory

FORMAT_VERSION = 1
ENV_NAME = "mountaincar-mod"


def trajectory_to_record(traj: Trajectory) -> dict[str, Any]:
    """Convert a trajectory into its JSON-ready line object."""
    return {
        "steps": [
            [
                step.state.position,
                step.state.velocity,
                step.action,
                step.reward,
                step.behavior_prob,
            ]
            for step in traj.steps
        ],
        "terminated": traj.terminated,
    }


def trajectory_from_record(record: dict[str, Any]) -> Trajectory:
    """Parse a trajectory line object.

    Raises:
        DatasetError: If the record is missing fields or holds invalid steps.
    """
    try:
        steps = tuple(
            Step(
                state=State(float(p), float(v)),
                action=int(a),
                reward=float(r),
                behavior_prob=None if bp is None else float(bp),
            )
            for p, v, a, r, bp in record["steps"]
        )
        return Trajectory(steps=steps, terminated=bool(record["terminated"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed trajectory record: {exc}") from exc


def _header(meta: DatasetMeta) -> dict[str, Any]:
    env = meta.env_config
    return {
        "version": FORMAT_VERSION,
        "env": ENV_NAME,
        "action_repeat": env.action_repeat,
        "max_macro_steps": env.max_macro_steps,
        "goal_position": env.goal_position,
        "seed": meta.source_seed,
        "behavior_policy_id": meta.behavior_policy_id,
        "collection_time": meta.collection_time,
    }


def format_dataset(dataset: Dataset) -> str:
    """Render a dataset as line-delimited JSON text."""
    lines: Iterable[dict[str, Any]] = [_header(dataset.meta)] + [
        trajectory_to_record(t) for t in dataset.trajectories
    ]
    return "".join(json.dumps(line) + "\n" for line in lines)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset file, creating parent directories as needed."""
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(format_dataset(dataset), encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {out}: {exc}") from exc


def parse_dataset(text: str) -> Dataset:
    """Parse line-delimited JSON dataset text.

    Raises:
        DatasetError: On a missing or foreign header or malformed lines.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DatasetError("dataset file has no header")
    try:
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON in dataset: {exc}") from exc

    if not isinstance(header, dict):
        raise DatasetError("dataset header must be a JSON object")
    if header.get("env") != ENV_NAME:
        raise DatasetError(f"unsupported env {header.get('env')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported format version {header.get('version')!r}")

    try:
        env = EnvConfig(
            action_repeat=int(header["action_repeat"]),
            max_macro_steps=int(header["max_macro_steps"]),
            goal_position=float(header.get("goal_position", 0.5)),
        )
        meta = DatasetMeta(
            source_seed=header.get("seed"),
            behavior_policy_id=str(header.get("behavior_policy_id", "unknown")),
            collection_time=int(header.get("collection_time", 0)),
            env_config=env,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed dataset header: {exc}") from exc
    return Dataset(
        trajectories=tuple(trajectory_from_record(r) for r in records), meta=meta
    )


def read_dataset(path: str | Path) -> Dataset:
    """Read a dataset file written by :func:`write_dataset`.

    Raises:
        DatasetError: If the file cannot be read or parsed.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    return parse_dataset(text)
