"""Trace one search episode and render heatmaps and saliency maps.

Exports per-step CSVs plus SVG grids (darker cell = higher probability;
queried cells annotated with their step number and +/- outcome), and
shows the forced-outcome sensitivity check: feeding the policy all-
success vs all-failure outcomes makes its query sequences diverge.
Run 02_train_policy.py first.
"""

import os

from gridseek import (
    SynthConfig,
    VasPolicy,
    export_heatmap,
    export_saliency,
    first_divergence_step,
    generate,
    sensitivity_trace,
)

HERE = os.path.dirname(__file__)
MODEL = os.path.join(HERE, "output", "model", "policy.vasp")
OUT = os.path.join(HERE, "output", "figures")
os.makedirs(OUT, exist_ok=True)

policy = VasPolicy.load(MODEL)
family = SynthConfig(grid_shape=(6, 6), feature_dim=6, n_clusters=2,
                     target_rate=0.25, signal_strength=4.0, seed=8)
task = generate(family, 5, split="test").tasks[2]

trace = sensitivity_trace(policy, task, k=12)
print(f"task {task.id}: {task.n_targets} targets, "
      f"found {trace.utility} in 12 queries (ESR {trace.esr:.2f})")
print("query order:", trace.cells)

csv_path, svg_path = export_heatmap(trace, policy, task,
                                    os.path.join(OUT, "episode"))
print("heatmap:", csv_path, svg_path)
csv_path, svg_path = export_saliency(trace, policy, task,
                                     os.path.join(OUT, "episode"))
print("saliency:", csv_path, svg_path)

up = sensitivity_trace(policy, task, 12, intervention="force-success")
down = sensitivity_trace(policy, task, 12, intervention="force-failure")
print(f"forced all-success order:  {up.cells}")
print(f"forced all-failure order:  {down.cells}")
print("first divergence at step:", first_divergence_step(up, down))
