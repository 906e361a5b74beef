"""Four training schemes on the breast-cancer table, averaged over seeds.

Trains an MLP with hidden widths (20, 10) as the black-box, then compares
Standard, GBFL, Distillation and Augmentation trees on local consistency and
accuracy. With five seeds this takes about a minute on one core.

    python3 demos/wdbc_table.py [n_seeds] [output_dir]
"""

import sys
from pathlib import Path

from gbfl import PipelineConfig, render_markdown, run_pipeline

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
out = sys.argv[2] if len(sys.argv) > 2 else None
data = Path(__file__).resolve().parents[1] / "tests" / "data" / "wdbc.csv"

cfg = PipelineConfig(
    dataset={"path": str(data), "label_column": "diagnosis", "name": "WDBC"},
    seeds=list(range(n_seeds)),
    grid_points=[10],   # N + 1
    deltas=[4],
    blackbox={"kind": "mlp", "hidden_layer_widths": [20, 10]},
    output_dir=out,
)
report = run_pipeline(cfg)
print(render_markdown(report))
print("top clauses of the first seed's GBFL tree:")
for r in report.rules:
    print(f"  {r['rank']}. ({r['importance']:.3f})  {r['rule']}")
for block in report.per_seed:
    hp = block["hyperparameters"]["GBFL"]
    print(f"seed {block['seed']}: {hp['n_clauses']} clauses, tree height {hp['tree_height']}, "
          f"PN coverage {block['explanations']['train']['pn_coverage']:.2f}")
