"""Deterministic FG:Raw instruction mixing and corpus word statistics."""
from trajforge import synth
from trajforge.mixsample import MixtureSpec, corpus_stats, display_density, fg_fraction, sample_stream

eps = synth.pipeline_fixture(tasks=2, per_task=3)

spec = MixtureSpec(2, 1, seed=42)
for d in sample_stream(eps, eps, spec, 5):
    print(d.step, d.variant, d.episode_id, "|", d.instruction.replace("\n", " / "))

for fg, raw in [(1, 4), (1, 1), (2, 1), (4, 1)]:
    s = MixtureSpec(fg, raw, seed=7)
    print(f"{fg}:{raw}  target {s.p_fg:.3f}  observed {fg_fraction(s, 100_000):.4f}")

# same seed, same stream; longer streams extend shorter ones
print(sample_stream(eps, eps, spec, 50) == sample_stream(eps, eps, spec, 80)[:50])

stats = corpus_stats(eps).totals
print(f"coarse {stats.avg_words_coarse:.1f} words, fine-grained {stats.avg_words_fg:.1f} words, density {display_density(stats.density)}")
