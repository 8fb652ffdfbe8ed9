import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajforge import synth
from trajforge.errors import MixtureError
from trajforge.mixsample import (
    GOLDEN,
    MixtureSpec,
    corpus_stats,
    counter_bits,
    display_density,
    fg_fraction,
    sample_stream,
    save_stream,
    word_count,
)
from trajforge.model import StepAnnotation

MASK = (1 << 64) - 1

# first outputs of the reference SplitMix64 generator seeded with 0
SPLITMIX_SEED0 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def splitmix_ref(x):
    z = x & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def _episodes(n, fg=True, prefix="e"):
    eps = []
    for i in range(n):
        ep = synth.perfect_joint_episode(f"{prefix}{i:02d}", T=4, rng=i)
        eps.append(
            synth.episode(
                ep.episode_id, list(ep.fields.values()), raw=f"raw instruction {i}",
                fg=[f"step one of {i}", f"step two of {i}"] if fg else None,
            )
        )
    return eps


FG_SET = _episodes(5)
RAW_SET = FG_SET + _episodes(3, fg=False, prefix="r")


def test_counter_stream_matches_reference_splitmix():
    assert [int(counter_bits(0, 0, 0)), int(counter_bits(0, 0, 1)), int(counter_bits(0, 1, 0))] == SPLITMIX_SEED0
    for seed in (1, 12345, 2**63 + 7):
        for i in range(5):
            for lane in (0, 1):
                expected = splitmix_ref(seed + (2 * i + lane + 1) * GOLDEN)
                assert int(counter_bits(seed, i, lane)) == expected


def test_raw_weight_zero_all_fg():
    draws = sample_stream(FG_SET, RAW_SET, MixtureSpec(1, 0, seed=3), 500)
    assert all(d.variant == "fg" for d in draws)
    draws = sample_stream(FG_SET, RAW_SET, MixtureSpec(0, 1, seed=3), 500)
    assert all(d.variant == "raw" for d in draws)


def test_two_to_one_at_300k():
    draws = sample_stream(FG_SET, RAW_SET, MixtureSpec(2, 1, seed=0), 300_000)
    frac = sum(d.variant == "fg" for d in draws) / len(draws)
    assert abs(frac - 2 / 3) <= 0.005
    assert frac == fg_fraction(MixtureSpec(2, 1, seed=0), 300_000)


def test_one_to_one_at_100k():
    assert abs(fg_fraction(MixtureSpec(1, 1, seed=11), 100_000) - 0.5) <= 0.01


@pytest.mark.parametrize("fg,raw", [(0, 1), (1, 4), (1, 2), (1, 1), (2, 1), (4, 1), (1, 0)])
def test_seven_configurations_converge(fg, raw):
    spec = MixtureSpec(fg, raw, seed=2026)
    assert abs(fg_fraction(spec, 100_000) - spec.p_fg) < 0.01


def test_draw_contents_and_uniform_episode_pick():
    draws = sample_stream(FG_SET, RAW_SET, MixtureSpec(1, 1, seed=5), 40_000)
    by_id = {ep.episode_id: ep for ep in RAW_SET}
    for d in draws[:200]:
        ep = by_id[d.episode_id]
        assert d.instruction == (ep.fg_text() if d.variant == "fg" else ep.raw_instruction)
    raw_ids = [d.episode_id for d in draws if d.variant == "raw"]
    counts = np.array([raw_ids.count(ep.episode_id) for ep in RAW_SET])
    # raw draws cover the whole Raw set, including trajectories also in the FG set
    assert counts.min() > 0
    np.testing.assert_allclose(counts / counts.sum(), 1 / len(RAW_SET), atol=0.02)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(0, 200), st.integers(0, 200))
def test_reproducible_and_prefix_stable(seed, n, extra):
    spec = MixtureSpec(2, 1, seed=seed)
    a = sample_stream(FG_SET, RAW_SET, spec, n)
    assert a == sample_stream(FG_SET, RAW_SET, spec, n)
    longer = sample_stream(FG_SET, RAW_SET, spec, n + extra)
    assert longer[:n] == a
    tail = sample_stream(FG_SET, RAW_SET, spec, extra, start=n)
    assert longer[n:] == tail


def test_sample_stream_errors():
    with pytest.raises(MixtureError):
        sample_stream(FG_SET, RAW_SET, MixtureSpec(1, 1), -1)
    with pytest.raises(MixtureError):
        sample_stream([], RAW_SET, MixtureSpec(1, 1), 5)
    with pytest.raises(MixtureError):
        sample_stream(_episodes(2, fg=False), RAW_SET, MixtureSpec(1, 1), 5)
    with pytest.raises(MixtureError):
        MixtureSpec(0, 0)


def test_save_stream_jsonl(tmp_path):
    draws = sample_stream(FG_SET, RAW_SET, MixtureSpec(2, 1, seed=1), 10)
    save_stream(draws, tmp_path / "m.jsonl")
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert len(lines) == 10
    assert [json.loads(x)["step"] for x in lines] == list(range(10))


def test_word_count_examples():
    assert word_count("") == 0
    assert word_count("   ") == 0
    assert word_count("pick up the cup") == 4
    assert word_count({"Step1": "open gripper", "Step2": "grasp the mug"}) == 5
    assert word_count([StepAnnotation(1, "open gripper"), StepAnnotation(2, "grasp the mug")]) == 5
    assert word_count("grasp, then lift.") == 3


def _texts(total, n):
    """``n`` texts of varied length whose word counts sum to ``total``."""
    base, rest = divmod(total, n)
    lengths = [base + (1 if i < rest else 0) for i in range(n)]
    # shift words between neighbours so lengths differ but the sum holds
    for i in range(0, n - 1, 2):
        move = min(2, lengths[i] - 1)
        lengths[i] -= move
        lengths[i + 1] += move
    return [" ".join(["w"] * k) for k in lengths]


def _corpus(coarse_total, fg_total, n=10, source="src", steps=4):
    coarse = _texts(coarse_total, n)
    fg = _texts(fg_total, n * steps)
    eps = []
    for i in range(n):
        ep = synth.perfect_joint_episode(f"{source}-{i}", T=3, rng=i)
        eps.append(
            synth.episode(
                ep.episode_id, list(ep.fields.values()), raw=coarse[i], fg=fg[i * steps:(i + 1) * steps], source=source
            )
        )
    return eps


def test_density_total_row():
    eps = _corpus(93, 968)
    st_ = corpus_stats(eps).totals
    assert st_.avg_words_coarse == pytest.approx(9.3) and st_.avg_words_fg == pytest.approx(96.8)
    assert display_density(st_.density) == "10.4x"
    assert st_.to_dict()["density"] == 10.4


def test_density_bcz_row():
    eps = _corpus(52, 512, source="bc_z")
    st_ = corpus_stats(eps).per_source["bc_z"]
    assert (st_.avg_words_coarse, st_.avg_words_fg) == pytest.approx((5.2, 51.2))
    assert display_density(st_.density) == "9.8x"
    assert st_.trajectories == 10 and st_.steps == 40


def test_density_equal_texts_is_one_and_flags_empty():
    eps = []
    for i in range(3):
        ep = synth.perfect_joint_episode(f"x{i}", T=3, rng=i)
        eps.append(synth.episode(ep.episode_id, list(ep.fields.values()), raw="pick up the cup", fg=["pick up the cup"], source="a"))
    mute = synth.episode("m", list(eps[0].fields.values()), raw="", fg=["grasp"], source="b")
    stats = corpus_stats(eps + [mute])
    assert stats.per_source["a"].density == 1.0
    assert stats.per_source["b"].density is None and stats.flagged == ("b",)
    assert stats.to_dict()["per_source"]["b"]["density"] is None


def test_totals_consistent_with_sources():
    eps = _corpus(93, 968, source="a") + _corpus(52, 512, source="b")
    stats = corpus_stats(eps)
    t = stats.totals
    assert t.trajectories == sum(s.trajectories for s in stats.per_source.values())
    assert t.avg_words_coarse == pytest.approx((93 + 52) / 20)
    assert t.density == pytest.approx(t.avg_words_fg / t.avg_words_coarse)
