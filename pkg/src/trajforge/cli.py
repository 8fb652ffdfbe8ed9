"""Command-line driver. Each stage reads the previous stage's files from the output directory.

Usage::

    trajforge [--config cfg.json] [--manifest PATH] [--out DIR] [--workers N]
              [--seed S] SUBCOMMAND [--section.key=value ...]

Stage outputs (fixed names under the output directory)::

    validate       validation.json
    canon          canon/manifest.json, canon/episodes/*.json
    filter         consistency.json, filter_report.json
    dtw            dtw/index.json, dtw/<task>.json
    cluster        clusters/<task>.json, representatives.json
    stats          corpus_stats.json
    mix            mixture.jsonl
    score-vqa      vqa_report.json
    score-caption  caption_report.json
    correlate      correlation.json
    pipeline       validate -> canon -> filter -> dtw -> cluster -> stats

Exit codes: 0 success, 1 data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import _jsonio
from .benchscore import (
    caption_report,
    load_alignments,
    load_predictions,
    load_questions,
    rank_correlation,
    score_vqa,
    vqa_report,
)
from .canon import canonicalize_episode
from .cluster import cluster_group, quality_score, save_result
from .dtw import CostWeights, default_workers, load_matrix, pairwise_matrix, save_matrix
from .errors import ConfigError, TrajforgeError
from .filtergate import (
    FilterRules,
    consistency_filter,
    episode_consistency,
    load_report,
    metadata_filter,
    save_report,
)
from .mixsample import MixtureSpec, corpus_stats, sample_stream, save_stream
from .model import load_manifest, validate_episode, write_dataset

logger = logging.getLogger("trajforge")

DEFAULTS = {
    "manifest": None,
    "output_dir": "trajforge_out",
    "workers": None,
    "filter": {
        "min_frames": 1,
        "max_black_frame_fraction": 1.0,
        "luma_threshold": 10.0,
        "required_fields": [],
        "consistency_mode": "percentile",
        "consistency_value": 95.0,
    },
    "dtw": {"w_pos": 1.0, "w_rot": 1.0, "w_grip": 100.0, "mode": None},
    "cluster": {
        "epsilon": 1e-9,
        "w_smooth": 0.5,
        "w_valid": 0.5,
        "w_proximity": 0.5,
        "w_quality": 0.5,
        "size_cutoff": 10,
    },
    "mix": {"fg_weight": 2.0, "raw_weight": 1.0, "seed": 0, "n": 1000},
    "scoring": {
        "questions": None,
        "predictions": None,
        "alignments": None,
        "micro": False,
        "model_scores": None,
        "human_ranks": None,
        "worst_rank": 6,
    },
}

_PATH_KEYS = {("manifest",), ("output_dir",)} | {
    ("scoring", k) for k in ("questions", "predictions", "alignments", "model_scores", "human_ranks")
}


class UsageError(Exception):
    pass


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be an object")
            out[key] = _merge(out[key], value, where + key + ".")
        else:
            out[key] = value
    return out


def _resolve_paths(cfg, base_dir):
    for path in _PATH_KEYS:
        node = cfg
        for k in path[:-1]:
            node = node[k]
        v = node[path[-1]]
        if v is not None and not Path(v).is_absolute():
            node[path[-1]] = str(base_dir / v)
    return cfg


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_override(cfg, dotted, value):
    keys = dotted.replace("-", "_").split(".")
    node = cfg
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise UsageError(f"unknown option --{dotted}")
        node = node[k]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise UsageError(f"unknown option --{dotted}")
    node[keys[-1]] = value


@dataclass
class PipelineConfig:
    raw: dict

    @classmethod
    def build(cls, config_path=None, overrides=()):
        cfg = copy.deepcopy(DEFAULTS)
        if config_path is not None:
            path = Path(config_path)
            try:
                data = _jsonio.load_file(path)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            cfg = _resolve_paths(_merge(cfg, data), path.parent)
        for dotted, value in overrides:
            _apply_override(cfg, dotted, value)
        conf = cls(cfg)
        conf.filter_rules()
        conf.weights()
        conf.mixture()
        return conf

    @property
    def out(self):
        return Path(self.raw["output_dir"])

    @property
    def manifest(self):
        if not self.raw["manifest"]:
            raise ConfigError("no manifest configured", hint="pass --manifest PATH or set \"manifest\" in the config")
        return Path(self.raw["manifest"])

    @property
    def workers(self):
        w = self.raw["workers"]
        return default_workers() if w is None else int(w)

    def filter_rules(self):
        try:
            return FilterRules(**self.raw["filter"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def weights(self):
        d = {k: v for k, v in self.raw["dtw"].items() if k != "mode"}
        return CostWeights(**d)

    def mixture(self):
        m = self.raw["mix"]
        return MixtureSpec(float(m["fg_weight"]), float(m["raw_weight"]), int(m["seed"]))


# -- stages -----------------------------------------------------------------------------------


def _safe_name(task_id):
    return re.sub(r"[^A-Za-z0-9._-]", "_", task_id)


def stage_validate(conf):
    manifest = load_manifest(conf.manifest)
    report = {}
    for ep in manifest.iter_episodes():
        v = validate_episode(ep)
        if v:
            report[ep.episode_id] = [{"field": x.field, "frame": x.frame, "message": x.message} for x in v]
    _jsonio.dump_file({"dataset_name": manifest.dataset_name, "violations": report}, conf.out / "validation.json")
    logger.info("validate: %d episodes, %d with violations", len(manifest.episodes), len(report))
    return 0 if not report else 1


def stage_canon(conf):
    manifest = load_manifest(conf.manifest)
    episodes = []
    for ep in manifest.iter_episodes():
        if validate_episode(ep):
            # the filter stage reports these as invalid_values
            logger.warning("canon: skipping episode %s with invariant violations", ep.episode_id)
            continue
        episodes.append(canonicalize_episode(ep))
    write_dataset(manifest.dataset_name, episodes, conf.out / "canon")
    logger.info("canon: wrote %d canonical episodes", len(episodes))
    return 0


def _canon_manifest(conf):
    path = conf.out / "canon" / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{path} not found", hint="run the canon stage first")
    return load_manifest(path)


def stage_filter(conf):
    canon = _canon_manifest(conf)
    rules = conf.filter_rules()
    w = conf.weights()
    meta = metadata_filter(load_manifest(conf.manifest), rules)
    distances = {ep_id: episode_consistency(canon.load(ep_id), w) for ep_id in meta.kept}
    _jsonio.dump_file(distances, conf.out / "consistency.json")
    report = meta.merge(consistency_filter(distances, rules))
    save_report(report, conf.out / "filter_report.json")
    logger.info("filter: kept %d, dropped %d", len(report.kept), len(report.dropped))
    return 0


def _kept_groups(conf, manifest):
    path = conf.out / "filter_report.json"
    if not path.exists():
        raise ConfigError(f"{path} not found", hint="run the filter stage first")
    kept = set(load_report(path).kept)
    groups = {}
    for task_id, ids in sorted(manifest.task_index.items()):
        members = [manifest.load(i) for i in ids if i in kept]
        if members:
            groups[task_id] = members
    return groups


def stage_dtw(conf):
    manifest = _canon_manifest(conf)
    w = conf.weights()
    index = {}
    for task_id, group in _kept_groups(conf, manifest).items():
        dm = pairwise_matrix(group, conf.raw["dtw"]["mode"], w, conf.workers)
        name = f"{_safe_name(task_id)}.json"
        save_matrix(dm, conf.out / "dtw" / name)
        index[task_id] = name
    _jsonio.dump_file(index, conf.out / "dtw" / "index.json")
    logger.info("dtw: %d task matrices", len(index))
    return 0


def stage_cluster(conf):
    manifest = _canon_manifest(conf)
    index_path = conf.out / "dtw" / "index.json"
    if not index_path.exists():
        raise ConfigError(f"{index_path} not found", hint="run the dtw stage first")
    opts = conf.raw["cluster"]
    reps = {}
    for task_id, name in sorted(_jsonio.load_file(index_path).items()):
        dm = load_matrix(conf.out / "dtw" / name)
        scores = {i: quality_score(manifest.load(i), opts["w_smooth"], opts["w_valid"]) for i in dm.ids}
        result = cluster_group(
            dm, scores, epsilon=opts["epsilon"], size_cutoff=opts["size_cutoff"],
            w_proximity=opts["w_proximity"], w_quality=opts["w_quality"],
        )
        save_result(result, conf.out / "clusters" / name)
        reps[task_id] = [e for c in range(result.k) for e in result.representatives[c]]
    _jsonio.dump_file(reps, conf.out / "representatives.json")
    logger.info("cluster: %d representatives over %d tasks", sum(map(len, reps.values())), len(reps))
    return 0


def stage_stats(conf):
    stats = corpus_stats(load_manifest(conf.manifest))
    _jsonio.dump_file(stats.to_dict(), conf.out / "corpus_stats.json")
    logger.info("stats: total density %s", stats.totals.to_dict()["density"])
    return 0


def stage_mix(conf):
    manifest = load_manifest(conf.manifest)
    episodes = list(manifest.iter_episodes())
    fg = [ep for ep in episodes if ep.fg_instruction is not None]
    draws = sample_stream(fg, episodes, conf.mixture(), int(conf.raw["mix"]["n"]))
    save_stream(draws, conf.out / "mixture.jsonl")
    logger.info("mix: %d draws", len(draws))
    return 0


def _scoring_path(conf, key):
    v = conf.raw["scoring"][key]
    if not v:
        raise ConfigError(f"scoring.{key} not configured", hint=f"pass --scoring.{key}=PATH")
    return Path(v)


def stage_score_vqa(conf):
    questions = load_questions(_scoring_path(conf, "questions"))
    predictions = load_predictions(_scoring_path(conf, "predictions"))
    _jsonio.dump_file(vqa_report(score_vqa(predictions, questions)), conf.out / "vqa_report.json")
    return 0


def stage_score_caption(conf):
    counts = load_alignments(_scoring_path(conf, "alignments"))
    report = caption_report(counts, micro=bool(conf.raw["scoring"]["micro"]))
    _jsonio.dump_file(report, conf.out / "caption_report.json")
    return 0


def stage_correlate(conf):
    scores = _jsonio.load_file(_scoring_path(conf, "model_scores"))
    ranks = _jsonio.load_file(_scoring_path(conf, "human_ranks"))
    p, s = rank_correlation(scores, ranks, conf.raw["scoring"]["worst_rank"])
    _jsonio.dump_file({"pearson": p, "spearman": s, "models": sorted(scores)}, conf.out / "correlation.json")
    return 0


PIPELINE = ("validate", "canon", "filter", "dtw", "cluster", "stats")


def stage_pipeline(conf):
    for name in PIPELINE:
        code = STAGES[name](conf)
        if code != 0 and name != "validate":
            return code
        if code != 0:
            logger.warning("validate found violations; the filter stage will drop those episodes")
    return 0


STAGES = {
    "validate": stage_validate,
    "canon": stage_canon,
    "filter": stage_filter,
    "dtw": stage_dtw,
    "cluster": stage_cluster,
    "stats": stage_stats,
    "mix": stage_mix,
    "score-vqa": stage_score_vqa,
    "score-caption": stage_score_caption,
    "correlate": stage_correlate,
    "pipeline": stage_pipeline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="trajforge", description="Robot-trajectory corpus pipeline.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--manifest", help="dataset manifest (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--workers", type=int, help="parallel workers (default: $TRAJFORGE_WORKERS or all cores)")
    parser.add_argument("--seed", type=int, help="mixture seed (overrides mix.seed)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("subcommand", choices=sorted(STAGES))
    return parser


_FLAGS = {"config", "manifest", "out", "workers", "seed", "verbose", "help"}


def _split_overrides(argv):
    """Separate ``--section.key=value`` config overrides from regular flags."""
    known, overrides = [], []
    for arg in argv:
        m = re.fullmatch(r"--([A-Za-z_][\w.-]*)=(.*)", arg)
        if m and m.group(1) not in _FLAGS:
            overrides.append((m.group(1), _parse_value(m.group(2))))
        else:
            known.append(arg)
    return known, overrides


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    known, overrides = _split_overrides(argv)
    try:
        args = parser.parse_args(known)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    for flag, key in (("manifest", "manifest"), ("out", "output_dir"), ("workers", "workers")):
        if getattr(args, flag) is not None:
            overrides.append((key, getattr(args, flag)))
    if args.seed is not None:
        overrides.append(("mix.seed", args.seed))

    try:
        conf = PipelineConfig.build(args.config, overrides)
        return STAGES[args.subcommand](conf)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"trajforge: error: {exc}", file=sys.stderr)
        return 2
    except TrajforgeError as exc:
        logger.error(exc.describe())
        return 1


if __name__ == "__main__":
    sys.exit(main())
