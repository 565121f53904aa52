"""
Measurements
============

Small versions of the experiment drivers. The full ones run from the CLI:
``harness experiment <name> --config demos/configs/<name>.json --out reports``.
"""

# %%
from covertsim import codec, experiments

for n in (50_000, 100_000, 200_000, 330_000):
    print(n, round(codec.both_parts_probability(n), 4))

# %% a quick hit-rate run
res = experiments.run_experiment("hit-rate", {"n_values": [50_000, 200_000], "trials": 5})
print(res.header)
for row in res.rows:
    print(row)

# %% augmentation cost grows with the crawl
res = experiments.run_experiment("gen-efficiency", {"n_tweets": [50, 100, 200], "num_aug": 20})
for row in res.rows:
    print(dict(zip(res.header, row)))

# %% how deep the botmaster sinks as the wait grows
res = experiments.run_experiment("crawl-vs-wait", {"waits": [5, 30], "trials": 2})
for row in res.rows:
    print(dict(zip(res.header, row)))
