"""Compare the adaptive policy against non-adaptive baselines.

The score is the effective success rate (ESR): targets discovered divided
by min(total targets, budget).  Baselines: uniform random querying, a
per-cell classifier queried greedily top-K, and a one-shot selection
network sampled without replacement.  Run 02_train_policy.py first.

On this family the features alone nearly identify the targets, so a
fixed ranking is already close to optimal and the briefly-trained
adaptive policy has no edge.  Adaptivity pays off when features are
ambiguous and only query outcomes disambiguate them — see
04_adapt_at_test_time.py and the ambiguous-motif family used in
tests/test_acceptance.py.
"""

import os

import numpy as np

from gridseek import (
    BudgetSpec,
    GreedyNet,
    PolicyConfig,
    SynthConfig,
    TrainConfig,
    VasPolicy,
    evaluate,
    generate,
    train_greedy_classifier,
    train_greedy_selection,
)

HERE = os.path.dirname(__file__)
MODEL = os.path.join(HERE, "output", "model", "policy.vasp")
OUT = os.path.join(HERE, "output", "eval")
os.makedirs(OUT, exist_ok=True)

family = SynthConfig(grid_shape=(6, 6), feature_dim=6, n_clusters=2,
                     target_rate=0.25, signal_strength=4.0, seed=7)
train_tasks = generate(family, 120)
test_tasks = generate(SynthConfig(**{**family.__dict__, "seed": 8}), 100,
                      split="test")

policy = VasPolicy.load(MODEL)

pc = PolicyConfig.for_task_grid((6, 6), 6)
budget = BudgetSpec("uniform-random", k_min=12, k_max=18)

classifier = GreedyNet(pc, "classification", np.random.default_rng(1))
train_greedy_classifier(classifier, train_tasks,
                        TrainConfig(epochs=20, learning_rate=3e-3, seed=2))

selector = GreedyNet(pc, "selection", np.random.default_rng(2))
train_greedy_selection(selector, train_tasks,
                       TrainConfig(epochs=40, learning_rate=3e-3,
                                   budget_spec=budget, seed=3))

budgets = [12, 15, 18]
runs = [
    ("vas", dict(policy=policy)),
    ("greedy-select", dict(net=selector)),
    ("greedy-class", dict(net=classifier)),
    ("random", {}),
]
print(f"{'method':>14}  " + "  ".join(f"K={k}" for k in budgets))
for method, kwargs in runs:
    table = evaluate(method, test_tasks, budgets, seed=5, **kwargs)
    cells = "  ".join(f"{table.lookup(method, k).mean_esr:.3f}"
                      for k in budgets)
    print(f"{method:>14}  {cells}")
    table.to_csv(os.path.join(OUT, f"{method}.csv"))
print(f"per-method CSVs in {OUT}")
