"""DTW between two replays of one motion, then a full distance matrix over a task group."""
import numpy as np

from trajforge import synth
from trajforge.dtw import align, episode_view, normalize_group, pairwise_matrix

eps = synth.pipeline_fixture(tasks=2, per_task=4)
a, b = eps[0], eps[3]
print(len(a.fields["joint_action"]), "frames vs", len(b.fields["joint_action"]))

views = normalize_group([episode_view(a), episode_view(b)])
res = align(*views)
print("cost", res.cost, "path cells", len(res.path), "distance", res.distance)
print("first steps of the path:", res.path[:6])

# the other task is a different motion
other = normalize_group([episode_view(a), episode_view(eps[4])])
print("cross-task distance:", round(align(*other).distance, 4))

dm = pairwise_matrix(eps, workers=1)
print(dm.ids)
print(np.round(dm.values, 3))
