"""Every stage of the method on a toy problem whose answer is known.

The black-box says class 1 iff x0 > 5 on the square [0, 10]^2. A good
transparent proxy should discover a single interval on x0 and ignore x1.

    python3 demos/stump_walkthrough.py
"""

import numpy as np

from gbfl import (ClauseEvaluator, Dataset, ExplainerConfig, LogisticBlackBox, derive_base_values,
                  derive_bounds, evaluate_transparent, explain_dataset, fit_tree, format_rules,
                  generate_clauses, generate_grid, TransparentModel)

rng = np.random.default_rng(0)
X = rng.uniform(0, 10, (400, 2))
data = Dataset(X, (X[:, 0] > 5).astype(int), ("x0", "x1"), 2, {"low": 0, "high": 1})
train, test = data.subset(np.arange(300)), data.subset(np.arange(300, 400))

# a steep logistic unit stands in for an opaque model
blackbox = LogisticBlackBox.binary(np.array([4.0, 0.0]), -20.0)

# %% contrastive explanations
# Base values at zero: a PP keeps the least of x needed for its class, a PN
# adds the least needed to flip it.
bounds = derive_bounds(data)
base = derive_base_values(train, "zeros", bounds)
expl = explain_dataset(blackbox, train, base, bounds, ExplainerConfig())
print("explanation summary:", expl.summary())
for t in list(expl)[:3]:
    pn = "none" if t.pn is None else np.round(t.pn, 2)
    print(f"  x={np.round(t.x, 2)} class={t.y_blackbox} PP={np.round(t.pp, 2)} PN={pn}")

# %% density-aware grid and clauses
G = generate_grid(train, bounds, N=9)
print("\ngrid on x0:", np.round(G.column(0), 2))
clauses = generate_clauses(expl, G, base, delta=1)
print(f"{len(clauses)} distinct clauses from {len(expl)} samples, e.g.")
for c in clauses[:4]:
    print("  ", c.render(data.feature_names))

# %% transparent learner on the boolean clause features
M = ClauseEvaluator(clauses, 2)(train.features)
tree = fit_tree(M, expl.y_blackbox, max_height=3)
proxy = TransparentModel("GBFL", tree, clauses, 2)
print("\n" + format_rules(proxy.top_k(3), data.feature_names))

# %% local consistency on held-out samples
test_expl = explain_dataset(blackbox, test, base, bounds)
rep = evaluate_transparent(proxy, test_expl, test.labels)
print(f"test c_tb={rep.c_tb:.3f}  c_tb_pp={rep.c_tb_pp:.3f}  c_tb_pn={rep.c_tb_pn}  "
      f"accuracy={rep.accuracy_true_labels:.3f}")
