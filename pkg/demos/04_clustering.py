"""Average-linkage clustering on a planted distance matrix and representative selection."""
from trajforge import synth
from trajforge.cluster import auto_k, average_linkage, cluster_group

dm, truth = synth.planted_matrix([5, 12, 3], within=0.1, between=1.0, rng=3)

merges = average_linkage(dm)
for m in merges[-4:]:
    print(f"merge {m.left:2d} + {m.right:2d} at {m.height:.3f} -> size {m.size}")
print("auto k:", auto_k(merges))

result = cluster_group(dm)
for c in range(result.k):
    members = result.members(c)
    print(f"cluster {c}: {len(members)} members, medoid {result.medoids[c]}, keep {result.representatives[c]}")
