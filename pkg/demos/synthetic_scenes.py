"""What the synthetic scenes contain and why the merge template is interactive.

Prints a merge scene in its normalised frame, then shows how much the
target's true future moves when the leader's observed manoeuvre is removed
(the interactivity certificate), next to the open-field control. Run:

    python3 demos/synthetic_scenes.py
"""

import numpy as np

from socialcvae import world

scene = world.generate("merge", 1, seed=3)[0]
print(f"{scene.scene_id}: {scene.n_agents} agents, {len(scene.lanelets)} lanelets, dt {scene.dt} s")
print(f"observed {scene.history_len} frames, predicted {scene.future_len} frames")
for a in scene.agents:
    tag = "target" if a.id == scene.target else ""
    speed = np.linalg.norm(a.history[-1] - a.history[-2]) / scene.dt
    print(f"  agent {a.id}: last observed ({a.history[-1, 0]:7.2f}, {a.history[-1, 1]:6.2f}) m, {speed:5.2f} m/s {tag}")

tpl = world.DEFAULT_TEMPLATES["merge"]
raw = world.simulate(tpl, 3, 0)
masked = world.simulate(tpl, 3, 0, masked=True)
i = raw.agent_index(raw.target)
shift = np.linalg.norm(raw.agents[i].future - masked.agents[i].future, axis=1)
print("target future shift when the leader's manoeuvre is masked (m):", np.round(shift[::5], 2))

for name in world.TEMPLATES:
    print(f"certificate {name:12s} {world.interactivity_certificate(name, 40, 0):.3f} m")
