"""Line-delimited JSON files for exported policies and learner checkpoints.

A policy snapshot is a header line followed by one weight row per action::

    {"version": 1, "kind": "greedy", "num_tilings": 8, "tiles_per_dim": 8,
     "low": [...], "high": [...], "soften": 0.05, "filter": null}
    [0.0, ...]
    [0.0, ...]
    [0.0, ...]

Softmax headers carry ``temperature`` and ``uniform_mix`` instead of
``soften`` and ``filter``. A checkpoint header holds the improver's method,
update counter and settings; its rows are the online weights followed, when
the learner has one, by the target weights.
"""

from dataclasses import asdict
import json
from pathlib import Path
from typing import Any

import numpy as np

from safeeval.errors import ConfigError, SnapshotError
from safeeval.improve import ImproveConfig, ImproverState
from safeeval.models import DiscretePolicy, NUM_ACTIONS
from safeeval.ope import EstimatedBehaviorPolicy, StateDiscretizer
from safeeval.tiles import GreedyPolicy, LinearQ, SoftmaxPolicy, TileCoder

SNAPSHOT_VERSION = 1
CHECKPOINT_KIND = "checkpoint"

Records = tuple[dict[str, Any], np.ndarray]


def _coder_fields(coder: TileCoder) -> dict[str, Any]:
    return {
        "num_tilings": coder.num_tilings,
        "tiles_per_dim": coder.tiles_per_dim,
        "low": list(coder.low),
        "high": list(coder.high),
    }


def _coder_from(header: dict[str, Any]) -> TileCoder:
    return TileCoder(
        num_tilings=int(header["num_tilings"]),
        tiles_per_dim=int(header["tiles_per_dim"]),
        low=(float(header["low"][0]), float(header["low"][1])),
        high=(float(header["high"][0]), float(header["high"][1])),
    )


def _weights_from(rows: Any, coder: TileCoder) -> np.ndarray:
    weights = np.asarray(rows, dtype=np.float64)
    expected = (NUM_ACTIONS, coder.feature_count)
    if weights.shape != expected:
        raise SnapshotError(f"weights have shape {weights.shape}, expected {expected}")
    return weights


def _filter_fields(policy: GreedyPolicy) -> dict[str, Any] | None:
    if policy.action_filter is None:
        return None
    pib = policy.action_filter
    if not isinstance(pib, EstimatedBehaviorPolicy):
        raise SnapshotError("only count-based action filters can be stored")
    return {
        "bins_per_dim": pib.disc.bins_per_dim,
        "alpha": pib.alpha,
        "threshold": policy.filter_threshold,
        "counts": pib.counts.tolist(),
    }


def policy_to_records(policy: DiscretePolicy) -> Records:
    """Header and weight matrix of a softmax or greedy policy.

    Raises:
        SnapshotError: For policy types that cannot be stored.
    """
    if isinstance(policy, SoftmaxPolicy):
        header = {
            "version": SNAPSHOT_VERSION,
            "kind": "softmax",
            **_coder_fields(policy.coder),
            "temperature": policy.temperature,
            "uniform_mix": policy.uniform_mix,
        }
        return header, policy.weights
    if isinstance(policy, GreedyPolicy):
        header = {
            "version": SNAPSHOT_VERSION,
            "kind": "greedy",
            **_coder_fields(policy.q.coder),
            "soften": policy.soften,
            "filter": _filter_fields(policy),
        }
        return header, policy.q.weights
    raise SnapshotError(f"cannot store policy of type {type(policy).__name__}")


def policy_from_records(header: dict[str, Any], rows: Any) -> DiscretePolicy:
    """Rebuild a policy from :func:`policy_to_records` output.

    Raises:
        SnapshotError: On an unknown version or kind, or malformed fields.
    """
    if header.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {header.get('version')!r}")
    kind = header.get("kind")
    if kind not in ("softmax", "greedy"):
        raise SnapshotError(f"unknown policy kind {kind!r}")
    try:
        coder = _coder_from(header)
        weights = _weights_from(rows, coder)
        if kind == "softmax":
            return SoftmaxPolicy(
                coder=coder,
                weights=weights,
                temperature=float(header["temperature"]),
                uniform_mix=float(header["uniform_mix"]),
            )
        spec = header["filter"]
        pib = None
        threshold = 0.0
        if spec is not None:
            disc = StateDiscretizer(int(spec["bins_per_dim"]))
            counts = np.asarray(spec["counts"], dtype=np.float64)
            if counts.shape != (disc.n_cells, NUM_ACTIONS):
                raise SnapshotError("filter counts do not match the discretizer")
            pib = EstimatedBehaviorPolicy(disc, counts, float(spec["alpha"]))
            threshold = float(spec["threshold"])
        return GreedyPolicy(
            q=LinearQ(coder, weights),
            soften=float(header["soften"]),
            action_filter=pib,
            filter_threshold=threshold,
        )
    except SnapshotError:
        raise
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise SnapshotError(f"malformed policy snapshot: {exc}") from exc


def checkpoint_to_records(state: ImproverState, cfg: ImproveConfig) -> Records:
    """Header and stacked online (then target) weights of an improver."""
    header = {
        "version": SNAPSHOT_VERSION,
        "kind": CHECKPOINT_KIND,
        "method": state.method,
        "update_counter": state.update_counter,
        "config": asdict(cfg),
        "target": state.target is not None,
    }
    if state.target is None:
        return header, state.online
    return header, np.vstack([state.online, state.target])


def checkpoint_from_records(
    header: dict[str, Any], rows: Any
) -> tuple[ImproverState, ImproveConfig]:
    """Rebuild (state, settings) from :func:`checkpoint_to_records` output.

    Raises:
        SnapshotError: On an unknown version or malformed fields.
    """
    if header.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(
            f"unsupported checkpoint version {header.get('version')!r}"
        )
    if header.get("kind") != CHECKPOINT_KIND:
        raise SnapshotError(f"not a checkpoint: kind {header.get('kind')!r}")
    try:
        cfg = ImproveConfig(**header["config"])
        coder = cfg.coder
        matrix = np.asarray(rows, dtype=np.float64)
        has_target = bool(header["target"])
        online = _weights_from(matrix[:NUM_ACTIONS], coder)
        target = None
        if has_target:
            target = _weights_from(matrix[NUM_ACTIONS:], coder)
        elif len(matrix) != NUM_ACTIONS:
            raise SnapshotError(
                f"checkpoint has {len(matrix)} weight rows, expected {NUM_ACTIONS}"
            )
        state = ImproverState(
            method=str(header["method"]),
            online=online,
            target=target,
            update_counter=int(header["update_counter"]),
        )
    except ConfigError as exc:
        raise SnapshotError(f"checkpoint settings are invalid: {exc}") from exc
    except SnapshotError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed checkpoint: {exc}") from exc
    if state.method != cfg.method:
        raise SnapshotError("checkpoint method does not match its settings")
    return state, cfg


def format_records(header: dict[str, Any], rows: np.ndarray) -> str:
    """Render a header line followed by one JSON array per weight row."""
    lines = [json.dumps(header)] + [json.dumps(row) for row in rows.tolist()]
    return "".join(line + "\n" for line in lines)


def parse_records(text: str) -> tuple[dict[str, Any], list[list[float]]]:
    """Split snapshot text into its header object and weight rows.

    Raises:
        SnapshotError: On a missing header, invalid JSON or non-array rows.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise SnapshotError("snapshot file has no header")
    try:
        header = json.loads(lines[0])
        rows = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"invalid JSON in snapshot: {exc}") from exc
    if not isinstance(header, dict):
        raise SnapshotError("snapshot header must be a JSON object")
    if not all(isinstance(row, list) for row in rows):
        raise SnapshotError("snapshot weight rows must be JSON arrays")
    return header, rows


def _write(records: Records, path: str | Path) -> None:
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(format_records(*records), encoding="utf-8")
    except OSError as exc:
        raise SnapshotError(f"cannot write {out}: {exc}") from exc


def _read(path: str | Path) -> tuple[dict[str, Any], list[list[float]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise SnapshotError(f"cannot read {path}: {exc}") from exc
    return parse_records(text)


def write_policy(policy: DiscretePolicy, path: str | Path) -> None:
    """Store an exported policy."""
    _write(policy_to_records(policy), path)


def read_policy(path: str | Path) -> DiscretePolicy:
    """Load a policy stored by :func:`write_policy`."""
    return policy_from_records(*_read(path))


def write_checkpoint(
    state: ImproverState, cfg: ImproveConfig, path: str | Path
) -> None:
    """Store an improver state with its settings."""
    _write(checkpoint_to_records(state, cfg), path)


def read_checkpoint(path: str | Path) -> tuple[ImproverState, ImproveConfig]:
    """Load a checkpoint stored by :func:`write_checkpoint`."""
    return checkpoint_from_records(*_read(path))
