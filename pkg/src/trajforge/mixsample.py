"""FG:Raw instruction mixtures and instruction-length statistics.

Random numbers come from a counter-based stream: the value for draw ``i``
is the SplitMix64 finalizer applied to ``seed + (2 i + lane + 1) * GOLDEN``
(mod 2**64), with lane 0 picking the variant and lane 1 picking the
episode. Draw ``i`` therefore never depends on how many draws are taken.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _jsonio
from .errors import MixtureError

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def splitmix64(x):
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x.copy()
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def counter_bits(seed, index, lane):
    """64 random bits for ``(seed, index, lane)``."""
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        counter = (index * np.uint64(2) + np.uint64(lane) + np.uint64(1)) * np.uint64(GOLDEN)
        return splitmix64(np.uint64(seed & _MASK) + counter)


def counter_uniform(seed, index, lane):
    """Uniform doubles in [0, 1) from the top 53 bits."""
    return (counter_bits(seed, index, lane) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class MixtureSpec:
    fg_weight: float
    raw_weight: float
    seed: int = 0

    def __post_init__(self):
        if self.fg_weight < 0 or self.raw_weight < 0 or not self.fg_weight + self.raw_weight > 0:
            raise MixtureError("weights must be non-negative with a positive sum")
        if not -(1 << 63) <= int(self.seed) < (1 << 64):
            raise MixtureError("seed must fit in 64 bits")

    @property
    def p_fg(self):
        return self.fg_weight / (self.fg_weight + self.raw_weight)


@dataclass(frozen=True)
class MixtureDraw:
    step: int
    episode_id: str
    variant: str
    instruction: str

    def to_dict(self):
        return {"step": self.step, "episode_id": self.episode_id, "variant": self.variant, "instruction": self.instruction}


def _pick(u, n):
    return np.minimum((u * n).astype(np.int64), n - 1)


def sample_stream(fg_set, raw_set, spec, n, start=0):
    """Draws ``start .. start + n - 1`` of the mixture stream.

    Each draw uses the FG variant with probability ``spec.p_fg`` and then picks
    an episode uniformly from that variant's set. The Raw set may contain the
    same trajectories as the FG set; only the instruction text differs.
    """
    if n < 0:
        raise MixtureError(f"n must be >= 0, got {n}")
    if spec.fg_weight > 0 and not fg_set:
        raise MixtureError("fg_weight > 0 but the FG set is empty")
    if spec.raw_weight > 0 and not raw_set:
        raise MixtureError("raw_weight > 0 but the Raw set is empty")
    for ep in fg_set:
        if ep.fg_instruction is None:
            raise MixtureError("episode in the FG set has no fine-grained instruction", episode_id=ep.episode_id)
    idx = np.arange(start, start + n, dtype=np.uint64)
    choose_fg = counter_uniform(spec.seed, idx, 0) < spec.p_fg
    u_pick = counter_uniform(spec.seed, idx, 1)
    fg_pick = _pick(u_pick, max(len(fg_set), 1))
    raw_pick = _pick(u_pick, max(len(raw_set), 1))
    draws = []
    for k in range(n):
        if choose_fg[k]:
            ep = fg_set[fg_pick[k]]
            draws.append(MixtureDraw(start + k, ep.episode_id, "fg", ep.fg_text()))
        else:
            ep = raw_set[raw_pick[k]]
            draws.append(MixtureDraw(start + k, ep.episode_id, "raw", ep.raw_instruction))
    return draws


def fg_fraction(spec, n):
    """Empirical FG share of the first ``n`` draws, without materializing them."""
    u = counter_uniform(spec.seed, np.arange(n, dtype=np.uint64), 0)
    return float(np.mean(u < spec.p_fg))


def save_stream(draws, path):
    _jsonio.dump_jsonl([d.to_dict() for d in draws], path)


# -- statistics ---------------------------------------------------------------------------


def word_count(text):
    """Whitespace tokens; a ``{"StepN": text}`` mapping or step list counts all step texts."""
    if text is None:
        return 0
    if isinstance(text, dict):
        return sum(word_count(v) for v in text.values())
    if isinstance(text, (list, tuple)):
        return sum(word_count(getattr(v, "text", v)) for v in text)
    return len(text.split())


@dataclass(frozen=True)
class SourceStats:
    trajectories: int
    steps: int
    avg_words_coarse: float
    avg_words_fg: float
    density: float | None

    def to_dict(self):
        return {
            "trajectories": self.trajectories,
            "steps": self.steps,
            "avg_words_coarse": round(self.avg_words_coarse, 1),
            "avg_words_fg": round(self.avg_words_fg, 1),
            "density": None if self.density is None else round(self.density, 1),
        }


@dataclass(frozen=True)
class CorpusStats:
    per_source: dict
    totals: SourceStats
    flagged: tuple = ()

    def to_dict(self):
        return {
            "per_source": {s: st.to_dict() for s, st in sorted(self.per_source.items())},
            "totals": self.totals.to_dict(),
            "flagged": list(self.flagged),
        }


def _stats(episodes):
    coarse = [word_count(ep.raw_instruction) for ep in episodes]
    annotated = [ep for ep in episodes if ep.fg_instruction is not None]
    fg = [word_count(ep.fg_instruction) for ep in annotated]
    steps = sum(len(ep.fg_instruction) for ep in annotated)
    avg_c = sum(coarse) / len(coarse) if coarse else 0.0
    avg_f = sum(fg) / len(fg) if fg else 0.0
    density = avg_f / avg_c if avg_c > 0 else None
    return SourceStats(len(episodes), steps, avg_c, avg_f, density)


def corpus_stats(episodes):
    """Instruction-length statistics per source dataset and overall.

    ``episodes`` is a manifest or any iterable of episodes. Averages are
    over trajectories (FG averages over annotated trajectories only);
    density is the FG average over the coarse average. Sources without any
    coarse words get ``density=None`` and are listed in ``flagged``.
    """
    if hasattr(episodes, "iter_episodes"):
        episodes = list(episodes.iter_episodes())
    by_source = {}
    for ep in episodes:
        by_source.setdefault(ep.source_dataset, []).append(ep)
    per_source = {s: _stats(eps) for s, eps in by_source.items()}
    flagged = tuple(sorted(s for s, st in per_source.items() if st.density is None))
    return CorpusStats(per_source, _stats(episodes), flagged)


def display_density(x):
    return None if x is None or not math.isfinite(x) else f"{x:.1f}x"
