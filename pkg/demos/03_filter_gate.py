"""Metadata checks and the action-state consistency gate."""
import numpy as np

from trajforge import synth
from trajforge.filtergate import FilterRules, consistency_distance, consistency_filter

good = synth.perfect_joint_episode("good", T=30, rng=1, gripper=False)
print("perfect log:", consistency_distance(good, "joint_action"))

# corrupt one action by increasing amounts
for offset in (0.05, 0.5, 5.0):
    v = good.fields["joint_action"].values.copy()
    v[12] += offset
    bad = synth.episode("bad", [good.fields["joint_state"], synth.series("joint_action", "action", "non_eef", "abs", "joint", v)])
    print(f"offset {offset:4}: {consistency_distance(bad, 'joint_action'):.4f}")

# percentile gate over a group of distances
rng = np.random.default_rng(0)
dists = {f"ep{i:02d}": float(x) for i, x in enumerate(rng.exponential(size=20))}
report = consistency_filter(dists, FilterRules(consistency_mode="percentile", consistency_value=95))
print("dropped at p95:", report.dropped_ids())
print("kept:", len(report.kept))
