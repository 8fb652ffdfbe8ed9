"""Episode filtering: metadata rules and the action-state DTW consistency gate."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _jsonio
from .dtw import CostWeights, TrajectoryView, align
from .errors import FilterError, SchemaError
from .model import validate_episode

logger = logging.getLogger(__name__)

REASONS = ("too_short", "black_frames", "missing_field", "invalid_values", "inconsistent")


@dataclass(frozen=True)
class FilterRules:
    min_frames: int = 1
    max_black_frame_fraction: float = 1.0
    luma_threshold: float = 10.0
    required_fields: tuple = ()
    consistency_mode: str = "percentile"
    consistency_value: float = 95.0

    def __post_init__(self):
        object.__setattr__(self, "required_fields", tuple(self.required_fields))
        if int(self.min_frames) != self.min_frames or self.min_frames < 1:
            raise FilterError(f"min_frames must be an integer >= 1, got {self.min_frames!r}")
        if not 0.0 <= self.max_black_frame_fraction <= 1.0:
            raise FilterError("max_black_frame_fraction must lie in [0, 1]")
        if self.consistency_mode == "percentile":
            if not 0.0 < self.consistency_value <= 100.0:
                raise FilterError("percentile must lie in (0, 100]")
        elif self.consistency_mode == "absolute_threshold":
            if not np.isfinite(self.consistency_value):
                raise FilterError("absolute threshold must be finite")
        else:
            raise FilterError(f"unknown consistency_mode {self.consistency_mode!r}")


@dataclass(frozen=True)
class Dropped:
    episode_id: str
    reason: str
    metric: float


@dataclass
class FilterReport:
    kept: list = field(default_factory=list)
    dropped: list = field(default_factory=list)

    def dropped_ids(self):
        return [d.episode_id for d in self.dropped]

    def merge(self, other):
        """Apply ``other`` (computed on this report's kept episodes) on top of this report."""
        gone = set(other.dropped_ids())
        return FilterReport(
            kept=[e for e in self.kept if e not in gone],
            dropped=sorted(self.dropped + other.dropped, key=lambda d: d.episode_id),
        )

    def to_dict(self):
        return {
            "kept": list(self.kept),
            "dropped": [{"episode_id": d.episode_id, "reason": d.reason, "metric": d.metric} for d in self.dropped],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kept=list(d["kept"]),
            dropped=[Dropped(x["episode_id"], x["reason"], float(x["metric"])) for x in d["dropped"]],
        )


def save_report(report, path):
    _jsonio.dump_file(report.to_dict(), path)


def load_report(path):
    return FilterReport.from_dict(_jsonio.load_file(path))


def check_metadata(ep, rules):
    """Return the first failed rule as ``(reason, metric)`` or ``None``."""
    missing = [f for f in rules.required_fields if f not in ep.fields]
    if missing:
        return "missing_field", float(len(missing))
    violations = validate_episode(ep)
    if violations:
        return "invalid_values", float(len(violations))
    if ep.frame_count < rules.min_frames:
        return "too_short", float(ep.frame_count)
    if ep.frame_stats is None:
        logger.info("episode %s has no frame_stats; black-frame rule skipped", ep.episode_id)
    else:
        black = np.mean([fs.mean_luma < rules.luma_threshold for fs in ep.frame_stats])
        if black > rules.max_black_frame_fraction:
            return "black_frames", float(black)
    return None


def metadata_filter(manifest, rules):
    """Apply the metadata rules to every episode of ``manifest``; output is ordered by episode id."""
    kept, dropped = [], []
    for ep_id in sorted(manifest.episode_ids):
        try:
            ep = manifest.load(ep_id)
        except OSError as exc:
            raise FilterError(f"unreadable episode file: {exc}", episode_id=ep_id) from None
        failed = check_metadata(ep, rules)
        if failed is None:
            kept.append(ep_id)
        else:
            dropped.append(Dropped(ep_id, *failed))
    return FilterReport(kept, dropped)


# -- consistency -------------------------------------------------------------------------


def implied_state_sequence(ep, field):
    """Absolute action targets for frames 2..T, i.e. the state the actions ask for.

    ``field`` names an absolute action field; its last frame has no successor
    state and is dropped.
    """
    spec = _action_spec(ep, field)
    if spec.prefix != "abs" or spec.suffix not in ("joint", "quat"):
        raise FilterError(f"field {field!r} is {spec.tag}; canonicalize first", episode_id=ep.episode_id)
    state = ep.fields[ep.paired_state(field)]
    action = ep.fields[field].values
    if _pose_width(state.spec) != _pose_width(spec):
        raise FilterError(
            f"action {field!r} and state {state.spec.name!r} have different layouts "
            f"({action.shape[1]} vs {state.values.shape[1]} columns)",
            episode_id=ep.episode_id,
        )
    return action[:-1]


def _action_spec(ep, field):
    if field not in ep.fields:
        raise FilterError(f"no field {field!r}", episode_id=ep.episode_id)
    spec = ep.fields[field].spec
    if spec.role != "action":
        raise FilterError(f"field {field!r} is not an action field", episode_id=ep.episode_id)
    return spec


def _pose_width(spec):
    return spec.dims - 1 if spec.gripper else spec.dims


def field_view(values, spec, with_gripper=True):
    """Cost-function view of raw field values (no normalization)."""
    values = np.asarray(values, dtype=np.float64)
    T = values.shape[0]
    grip = values[:, -1:] if spec.gripper and with_gripper else np.zeros((T, 0))
    if spec.kind == "non_eef":
        joints = values[:, :-1] if spec.gripper else values
        return TrajectoryView("joint", grip, joints=joints)
    return TrajectoryView("eef", grip, positions=values[:, None, 0:3], rotations=values[:, None, 3:7])


def consistency_distance(ep, field, w=CostWeights()):
    """Path-normalized DTW between the implied and recorded state sequences for frames 2..T."""
    if ep.frame_count < 2:
        raise FilterError("consistency needs at least 2 frames", episode_id=ep.episode_id)
    spec = _action_spec(ep, field)
    implied = implied_state_sequence(ep, field)
    state = ep.fields[ep.paired_state(field)]
    recorded = state.values[1:]
    # a gripper recorded on only one side cannot be compared; use the pose alone
    both = spec.gripper and state.spec.gripper
    return align(field_view(implied, spec, both), field_view(recorded, state.spec, both), w).distance


def episode_consistency(ep, w=CostWeights()):
    """Largest consistency distance over the episode's action fields (0 when none pair with a state)."""
    worst = 0.0
    for name in ep.field_names(role="action"):
        try:
            ep.paired_state(name)
        except SchemaError:
            logger.info("episode %s: action %r has no paired state; skipped", ep.episode_id, name)
            continue
        worst = max(worst, consistency_distance(ep, name, w))
    return worst


def consistency_threshold(distances, rules):
    if rules.consistency_mode == "absolute_threshold":
        return float(rules.consistency_value)
    if not distances:
        raise FilterError("percentile mode needs at least one distance")
    return float(np.percentile(np.fromiter(distances.values(), dtype=np.float64), rules.consistency_value))


def consistency_filter(distances, rules):
    """Drop episodes whose consistency distance exceeds the configured threshold."""
    for ep_id, d in distances.items():
        if not np.isfinite(d):
            raise FilterError(f"non-finite consistency distance {d!r}", episode_id=ep_id)
    if not distances and rules.consistency_mode == "absolute_threshold":
        return FilterReport()
    tau = consistency_threshold(distances, rules)
    kept, dropped = [], []
    for ep_id in sorted(distances):
        d = float(distances[ep_id])
        if d > tau:
            dropped.append(Dropped(ep_id, "inconsistent", d))
        else:
            kept.append(ep_id)
    return FilterReport(kept, dropped)
