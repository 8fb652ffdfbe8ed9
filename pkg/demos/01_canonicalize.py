"""Turn a mixed-convention episode into absolute actions with xyzw quaternions."""
import numpy as np

from trajforge import synth
from trajforge.canon import canonicalize_episode, geodesic, is_canonical

eps = synth.mixed_tag_episodes(n=10)
print("tag tuples covered:", len(synth.covered_tags(eps)))

ep = eps[1]
for name, s in ep.fields.items():
    print(f"  {name:13s} {s.spec.prefix:5s} {s.spec.suffix:6s} dims={s.values.shape[1]}")

canon = canonicalize_episode(ep)
print("canonical:", is_canonical(canon))
for name, s in canon.fields.items():
    print(f"  {name:13s} {s.spec.prefix:5s} {s.spec.suffix:6s} dims={s.values.shape[1]}")

# a second pass changes nothing
print("idempotent:", canonicalize_episode(canon) == canon)

# q and -q are the same rotation
q = canon.fields["left_state"].values[:, 3:7]
print("max d(q, -q):", geodesic(q, -q).max())
print("90 deg about z:", geodesic([0, 0, 0, 1], [0, 0, np.sqrt(0.5), np.sqrt(0.5)]))
