"""
Learning which components to keep
=================================

Start from task arithmetic and let a binary mask over every task's singular
components adapt on unlabeled test inputs by minimizing prediction entropy.
The merge coefficients adapt alongside.  Freezing the mask gives the
coefficient-only baseline.
"""

import numpy as np

from adarank import bench
from adarank.analysis import rank_report

wb = bench.prepare(seed=0)
ta = wb.accuracy(bench.static_merge(wb, "ta"))["mean"]
print(f"task arithmetic           {ta:.4f}")

coef_only = bench.run_profile(wb, "adamerging-ablation")[0]["mean"]
print(f"coefficients only         {coef_only:.4f}")

acc, state, trace, sp = bench.run_profile(wb, "adarank")
print(f"masks and coefficients    {acc['mean']:.4f}")

# %%
# Summed entropy over the four tasks, every 50 steps.
totals = trace.totals()
print("entropy:", np.round(totals[::50], 4))

# %%
# How many components each (task, layer) kept after 300 steps.
for (t, name), count in state.active_counts().items():
    print(f"task {t} {name}: {count}/{sp.k(name)} active")

# %%
# The same run started from the CART top-16% pattern.  Learned ranks then
# follow the intrinsic ranks of the task vectors.
acc_c, state_c, _, sp_c = bench.run_profile(wb, "cart")
print(f"CART start: accuracy {acc_c['mean']:.4f}, "
      f"rank correlation {rank_report(state_c, sp_c).correlation:.3f}")
