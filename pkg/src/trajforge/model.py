"""Domain types, the dataset manifest, and episode file I/O.

An episode file is UTF-8 JSON::

    {"episode_id": "...", "task_id": "...", "fps": 30,
     "raw_instruction": "pick up the cup",
     "fg_instruction": null | {"Step1": "...", "Step2": "..."},
     "source_dataset": "...",                      # optional
     "fields": {"<name>": {"role", "kind", "prefix", "suffix",
                           "gripper": bool,         # optional
                           "state": "<name>",       # optional, action fields only
                           "values": [[...], ...]}},
     "frame_stats": [{"mean_luma": 12.0, "valid": true}, ...] | null}

A manifest lists episode files relative to its own location::

    {"dataset_name": "...", "schema_version": "1.0",
     "episodes": [{"id": "...", "path": "...", "task_id": "..."}]}

Field tags follow the ``prefix_suffix`` scheme: states are always ``abs``,
actions may be ``abs``, ``delta`` (increment on the current state) or
``rel`` (offset from the first frame). Joint-space fields use ``joint``;
end-effector fields hold a 3D position followed by a rotation code
(``rotvec``, ``quat`` = xyzw, ``wxyz``, ``euler`` = intrinsic XYZ). A field
flagged ``gripper`` carries the gripper opening in its last column.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from . import _jsonio
from .errors import DanglingReferenceError, ParseError, SchemaError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

ROLES = ("state", "action")
KINDS = ("non_eef", "eef")
PREFIXES = ("abs", "delta", "rel")
SUFFIXES = ("joint", "rotvec", "quat", "wxyz", "euler")
ROTATION_DIMS = {"rotvec": 3, "quat": 4, "wxyz": 4, "euler": 3}

DIMENSIONS = (
    "action_sequence",
    "active_actor",
    "target_object",
    "initial_config",
    "final_config",
    "contact_approach",
    "trajectory_orientation",
    "object_interaction",
    "failure_recovery",
    "body_motion",
)

UNIT_NORM_TOL = 1e-6


def legal_tags():
    """All legal ``(role, kind, prefix, suffix)`` tuples: 5 state tags and 15 action tags."""
    tags = {("state", "non_eef", "abs", "joint")}
    tags |= {("state", "eef", "abs", s) for s in ROTATION_DIMS}
    tags |= {("action", "non_eef", p, "joint") for p in PREFIXES}
    tags |= {("action", "eef", p, s) for p, s in product(PREFIXES, ROTATION_DIMS)}
    return frozenset(tags)


_LEGAL_TAGS = legal_tags()


def eef_dims(suffix, gripper=False):
    return 3 + ROTATION_DIMS[suffix] + int(gripper)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    role: str
    kind: str
    prefix: str
    suffix: str
    dims: int
    gripper: bool = False
    state: str | None = None

    def __post_init__(self):
        tag = (self.role, self.kind, self.prefix, self.suffix)
        if tag not in _LEGAL_TAGS:
            if self.role == "state" and self.prefix != "abs":
                raise SchemaError(f"field {self.name!r}: state fields must be abs, got {self.prefix!r}")
            raise SchemaError(f"field {self.name!r}: illegal tag {tag}")
        if not isinstance(self.dims, int) or self.dims < 1:
            raise SchemaError(f"field {self.name!r}: dims must be a positive integer")
        if self.kind == "eef" and self.dims != eef_dims(self.suffix, self.gripper):
            raise SchemaError(
                f"field {self.name!r}: eef {self.suffix} needs {eef_dims(self.suffix, self.gripper)} dims, got {self.dims}"
            )
        if self.kind == "non_eef" and self.gripper and self.dims < 1:
            raise SchemaError(f"field {self.name!r}: gripper flag needs at least one column")
        if self.state is not None and self.role != "action":
            raise SchemaError(f"field {self.name!r}: only action fields may reference a state field")

    @property
    def tag(self):
        return f"{self.prefix}_{self.suffix}"

    @property
    def rotation_slice(self):
        if self.kind != "eef":
            return None
        return slice(3, 3 + ROTATION_DIMS[self.suffix])

    @property
    def gripper_index(self):
        return self.dims - 1 if self.gripper else None

    def to_dict(self):
        d = {"role": self.role, "kind": self.kind, "prefix": self.prefix, "suffix": self.suffix}
        if self.gripper:
            d["gripper"] = True
        if self.state is not None:
            d["state"] = self.state
        return d


@dataclass(frozen=True, eq=False)
class FieldSeries:
    spec: FieldSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.spec.dims:
            raise SchemaError(
                f"field {self.spec.name!r}: values must be [frames x {self.spec.dims}], got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FieldSeries):
            return NotImplemented
        return self.spec == other.spec and _bitwise_equal(self.values, other.values)

    __hash__ = None


def _bitwise_equal(a, b):
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


@dataclass(frozen=True)
class StepAnnotation:
    step_index: int
    text: str
    dimensions: Mapping[str, str | None] = field(default_factory=dict)

    def __post_init__(self):
        if self.step_index < 1:
            raise SchemaError(f"step index must be >= 1, got {self.step_index}")
        unknown = set(self.dimensions) - set(DIMENSIONS)
        if unknown:
            raise SchemaError(f"unknown annotation dimensions: {sorted(unknown)}")
        object.__setattr__(self, "dimensions", MappingProxyType(dict(self.dimensions)))

    def __hash__(self):
        return hash((self.step_index, self.text, tuple(sorted(self.dimensions.items()))))


@dataclass(frozen=True)
class FrameStat:
    mean_luma: float
    valid: bool = True


@dataclass(frozen=True, eq=False)
class Episode:
    episode_id: str
    task_id: str
    raw_instruction: str
    fields: Mapping[str, FieldSeries]
    frame_count: int
    fps: float
    fg_instruction: tuple[StepAnnotation, ...] | None = None
    frame_stats: tuple[FrameStat, ...] | None = None
    source_dataset: str = ""

    def __post_init__(self):
        object.__setattr__(self, "fields", MappingProxyType(dict(self.fields)))
        if self.fg_instruction is not None:
            object.__setattr__(self, "fg_instruction", tuple(self.fg_instruction))
        if self.frame_stats is not None:
            object.__setattr__(self, "frame_stats", tuple(self.frame_stats))

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.episode_id == other.episode_id
            and self.task_id == other.task_id
            and self.raw_instruction == other.raw_instruction
            and self.frame_count == other.frame_count
            and self.fps == other.fps
            and self.fg_instruction == other.fg_instruction
            and self.frame_stats == other.frame_stats
            and self.source_dataset == other.source_dataset
            and dict(self.fields) == dict(other.fields)
        )

    __hash__ = None

    def field_names(self, role=None, kind=None):
        return [
            n for n, s in sorted(self.fields.items())
            if (role is None or s.spec.role == role) and (kind is None or s.spec.kind == kind)
        ]

    def paired_state(self, action_name):
        """Name of the state field an action field refers to.

        Uses the action spec's explicit ``state`` reference when present,
        otherwise the single state field of the same kind.
        """
        spec = self.fields[action_name].spec
        if spec.role != "action":
            raise SchemaError(f"field {action_name!r} is not an action field", episode_id=self.episode_id)
        if spec.state is not None:
            if spec.state not in self.fields or self.fields[spec.state].spec.role != "state":
                raise SchemaError(
                    f"action field {action_name!r} references missing state field {spec.state!r}",
                    episode_id=self.episode_id,
                )
            return spec.state
        candidates = self.field_names(role="state", kind=spec.kind)
        if len(candidates) != 1:
            raise SchemaError(
                f"cannot pair action field {action_name!r} with a state field ({len(candidates)} candidates)",
                episode_id=self.episode_id,
                hint="set \"state\" on the action field",
            )
        return candidates[0]

    def fg_text(self):
        if self.fg_instruction is None:
            return None
        return "\n".join(step.text for step in self.fg_instruction)

    def with_fields(self, fields):
        return replace(self, fields=fields)


@dataclass(frozen=True)
class Violation:
    field: str | None
    frame: int | None
    message: str


def validate_episode(ep):
    """List every invariant violation in ``ep``; an empty list means the episode is well formed."""
    out = []
    if ep.frame_count < 1:
        out.append(Violation(None, None, f"frame_count must be >= 1, got {ep.frame_count}"))
    if not (isinstance(ep.fps, (int, float)) and math.isfinite(ep.fps) and ep.fps > 0):
        out.append(Violation(None, None, f"fps must be positive, got {ep.fps!r}"))
    for name, series in sorted(ep.fields.items()):
        values = series.values
        if len(series) != ep.frame_count:
            out.append(Violation(name, None, f"length {len(series)} != frame_count {ep.frame_count}"))
        finite = np.isfinite(values).all(axis=1)
        for t in np.flatnonzero(~finite):
            out.append(Violation(name, int(t), "non-finite value"))
        spec = series.spec
        if spec.suffix in ("quat", "wxyz"):
            norms = np.linalg.norm(values[:, spec.rotation_slice], axis=1)
            bad = finite & (np.abs(norms - 1.0) > UNIT_NORM_TOL)
            for t in np.flatnonzero(bad):
                out.append(Violation(name, int(t), f"quaternion norm {norms[t]:.6g} is not unit"))
        if spec.state is not None and spec.state not in ep.fields:
            out.append(Violation(name, None, f"references missing state field {spec.state!r}"))
    if ep.frame_stats is not None:
        if len(ep.frame_stats) != ep.frame_count:
            out.append(Violation(None, None, f"{len(ep.frame_stats)} frame_stats for {ep.frame_count} frames"))
        for t, fs in enumerate(ep.frame_stats):
            if not (math.isfinite(fs.mean_luma) and 0.0 <= fs.mean_luma <= 255.0):
                out.append(Violation(None, t, f"mean_luma {fs.mean_luma!r} outside 0-255"))
    if ep.fg_instruction is not None:
        indices = [s.step_index for s in ep.fg_instruction]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            out.append(Violation(None, None, "fg step indices are not strictly increasing"))
    return out


# -- episode (de)serialization -------------------------------------------------

_STEP_KEY = re.compile(r"^Step(\d+)$")


def _require(d, key, kind, where):
    if key not in d:
        raise SchemaError(f"{where}: missing field {key!r}")
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"{where}: field {key!r} has wrong type {type(v).__name__}")
    return v


def _parse_steps(obj, where):
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: fg_instruction must be null or a {{\"StepN\": text}} object")
    steps = []
    for key, text in obj.items():
        m = _STEP_KEY.match(key)
        if not m:
            raise SchemaError(f"{where}: bad fg_instruction key {key!r}")
        if not isinstance(text, str):
            raise SchemaError(f"{where}: step {key!r} text must be a string")
        steps.append(StepAnnotation(int(m.group(1)), text))
    steps.sort(key=lambda s: s.step_index)
    return tuple(steps)


def episode_from_dict(d, source_dataset=""):
    where = f"episode {d.get('episode_id', '?')}" if isinstance(d, dict) else "episode"
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: top level must be an object")
    episode_id = _require(d, "episode_id", str, where)
    task_id = _require(d, "task_id", str, where)
    fps = _require(d, "fps", (int, float), where)
    raw = _require(d, "raw_instruction", str, where)
    fg = _parse_steps(d.get("fg_instruction"), where)
    raw_fields = _require(d, "fields", dict, where)

    fields = {}
    for name, fd in raw_fields.items():
        fwhere = f"{where} field {name!r}"
        if not isinstance(fd, dict):
            raise SchemaError(f"{fwhere}: must be an object")
        values = _require(fd, "values", list, fwhere)
        try:
            arr = np.array(values, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{fwhere}: values must be a numeric matrix ({exc})") from None
        if arr.ndim != 2:
            raise SchemaError(f"{fwhere}: values must be a non-empty list of equal-length rows")
        spec = FieldSpec(
            name=name,
            role=_require(fd, "role", str, fwhere),
            kind=_require(fd, "kind", str, fwhere),
            prefix=_require(fd, "prefix", str, fwhere),
            suffix=_require(fd, "suffix", str, fwhere),
            dims=int(arr.shape[1]),
            gripper=bool(fd.get("gripper", False)),
            state=fd.get("state"),
        )
        fields[name] = FieldSeries(spec, arr)

    stats = d.get("frame_stats")
    frame_stats = None
    if stats is not None:
        if not isinstance(stats, list):
            raise SchemaError(f"{where}: frame_stats must be null or a list")
        frame_stats = tuple(
            FrameStat(float(_require(s, "mean_luma", (int, float), where)), bool(s.get("valid", True))) for s in stats
        )

    if fields:
        frame_count = len(next(iter(fields.values())))
    elif frame_stats is not None:
        frame_count = len(frame_stats)
    else:
        raise SchemaError(f"{where}: no fields and no frame_stats; frame count unknown")

    return Episode(
        episode_id=episode_id,
        task_id=task_id,
        raw_instruction=raw,
        fields=fields,
        frame_count=frame_count,
        fps=float(fps),
        fg_instruction=fg,
        frame_stats=frame_stats,
        source_dataset=d.get("source_dataset", source_dataset) or source_dataset,
    )


def episode_to_dict(ep):
    d = {
        "episode_id": ep.episode_id,
        "task_id": ep.task_id,
        "fps": ep.fps,
        "raw_instruction": ep.raw_instruction,
        "fg_instruction": None if ep.fg_instruction is None else {f"Step{s.step_index}": s.text for s in ep.fg_instruction},
        "fields": {
            name: {**series.spec.to_dict(), "values": series.values.tolist()} for name, series in ep.fields.items()
        },
        "frame_stats": None
        if ep.frame_stats is None
        else [{"mean_luma": fs.mean_luma, "valid": fs.valid} for fs in ep.frame_stats],
    }
    if ep.source_dataset:
        d["source_dataset"] = ep.source_dataset
    return d


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON ({exc})") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from None


def load_episode(path, source_dataset=""):
    return episode_from_dict(_read_json(path), source_dataset=source_dataset)


def save_episode(ep, path):
    _jsonio.dump_file(episode_to_dict(ep), path)


# -- manifest ------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeRef:
    id: str
    path: str
    task_id: str


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    dataset_name: str
    episodes: tuple[EpisodeRef, ...]
    schema_version: str = SCHEMA_VERSION
    root: Path = Path(".")
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def task_index(self):
        index = {}
        for ref in self.episodes:
            index.setdefault(ref.task_id, []).append(ref.id)
        return {task: tuple(ids) for task, ids in index.items()}

    @property
    def episode_ids(self):
        return [ref.id for ref in self.episodes]

    def ref(self, episode_id):
        for r in self.episodes:
            if r.id == episode_id:
                return r
        raise KeyError(episode_id)

    def resolve(self, ref):
        return (self.root / ref.path).resolve()

    def load(self, episode_id):
        if episode_id not in self._cache:
            self._cache[episode_id] = load_episode(self.resolve(self.ref(episode_id)), self.dataset_name)
        return self._cache[episode_id]

    def iter_episodes(self):
        for ref in self.episodes:
            yield self.load(ref.id)

    def to_dict(self):
        return {
            "dataset_name": self.dataset_name,
            "schema_version": self.schema_version,
            "episodes": [{"id": r.id, "path": r.path, "task_id": r.task_id} for r in self.episodes],
        }


def manifest_from_dict(d, root=Path(".")):
    where = "manifest"
    if not isinstance(d, dict):
        raise SchemaError("manifest: top level must be an object")
    name = _require(d, "dataset_name", str, where)
    version = _require(d, "schema_version", str, where)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"manifest: unsupported schema_version {version!r}")
    entries = _require(d, "episodes", list, where)
    refs = []
    seen = set()
    for i, e in enumerate(entries):
        ewhere = f"manifest episodes[{i}]"
        if not isinstance(e, dict):
            raise SchemaError(f"{ewhere}: must be an object")
        ref = EpisodeRef(_require(e, "id", str, ewhere), _require(e, "path", str, ewhere), _require(e, "task_id", str, ewhere))
        if ref.id in seen:
            raise SchemaError(f"{ewhere}: duplicate episode id {ref.id!r}")
        seen.add(ref.id)
        refs.append(ref)
    return DatasetManifest(dataset_name=name, episodes=tuple(refs), schema_version=version, root=Path(root))


def load_manifest(path):
    """Parse and fully validate a manifest, loading every referenced episode once.

    Raises :class:`ParseError` on malformed JSON, :class:`SchemaError` on
    missing fields or illegal tags, :class:`DanglingReferenceError` when an
    episode file is missing or disagrees with its manifest entry.
    """
    path = Path(path)
    if not path.exists():
        raise DanglingReferenceError(f"manifest {path} does not exist")
    manifest = manifest_from_dict(_read_json(path), root=path.parent)
    for ref in manifest.episodes:
        ep_path = manifest.resolve(ref)
        if not ep_path.is_file():
            raise DanglingReferenceError(f"episode file {ref.path!r} not found", episode_id=ref.id)
        try:
            ep = manifest.load(ref.id)
        except SchemaError as exc:
            exc.episode_id = ref.id
            raise
        if ep.episode_id != ref.id:
            raise DanglingReferenceError(
                f"file {ref.path!r} holds episode {ep.episode_id!r}", episode_id=ref.id
            )
        if ep.task_id != ref.task_id:
            raise SchemaError(
                f"manifest task_id {ref.task_id!r} != episode task_id {ep.task_id!r}", episode_id=ref.id
            )
    logger.debug("loaded manifest %s with %d episodes", path, len(manifest.episodes))
    return manifest


def save_manifest(manifest, path):
    _jsonio.dump_file(manifest.to_dict(), path)


def write_dataset(dataset_name, episodes, out_dir, subdir="episodes"):
    """Write ``episodes`` plus a ``manifest.json`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    refs = []
    for ep in episodes:
        rel = f"{subdir}/{ep.episode_id}.json"
        save_episode(ep, out_dir / rel)
        refs.append(EpisodeRef(ep.episode_id, rel, ep.task_id))
    manifest = DatasetManifest(dataset_name=dataset_name, episodes=tuple(refs), root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return out_dir / "manifest.json"
