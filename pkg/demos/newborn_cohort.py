"""Risk of small head circumference in a synthetic newborn cohort.

The flag is a nonlinear function of sex, gestational age and head
circumference, each of which can be missing. A complete-case prevalence
understates the risk because small heads are the ones more often missing a
gestational age. The mixture model fitted to all rows, followed by forward
simulation of new newborns, recovers the generator's risk.

    python3 demos/newborn_cohort.py        # under a minute
"""

from derivedbayes.analysis import Settings, analyze, prepare, sources_only
from derivedbayes.synthetic import ZikaGenParams, gen_zika_dataset

raw, truth = gen_zika_dataset(ZikaGenParams(), seed=3, truth_draws=10**6)
ds = prepare("zika", sources_only("zika", raw))
settings = Settings(seed=3, S=2000)

print(f"generator risk {100 * truth:.2f}%")
for label, strategy in (("complete-case prevalence", "bernoulli"), ("mixture model + forward simulation", "bsnmn-gcomp")):
    res = analyze("zika", ds, strategy, settings)
    s = res.summary()
    print(f"{label:36s} {100 * s['median']:.2f}%  [{100 * s['lo']:.2f}, {100 * s['hi']:.2f}]  ({res.minutes:.2f} min)")
