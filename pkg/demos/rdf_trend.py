"""
Fewer rotational degrees of freedom, easier classification
==========================================================

The same shapes are presented fully aligned (SO0), spun about Z (SO1), or
arbitrarily rotated (SO3).  A small point-wise classifier is trained and
tested within each setting.
"""

from rtnpose import evaluation, synth

# %%
# One seed and a reduced budget keep this quick; the acceptance suite runs
# three seeds at the default budget.
budget = evaluation.RdfBudget(per_family=24, toy=evaluation.ToyConfig(epochs=20))
table = evaluation.rdf_trend_experiment(synth.FAMILY_NAMES, seeds=(0,), budget=budget)
for row in table["rows"]:
    print(f"{row['mode']}: Ins {row['ins']:.3f}  mCls {row['mcls']:.3f}")
