# %% [markdown]
# # Facility cost models
#
# Throughput curves, transfer times and batch-queue waits for the four
# facilities in the shipped queued scenario. Everything here is closed form
# or a cheap Monte-Carlo draw, so the script runs in about a second.

# %%
import numpy as np

from fedhpc_sim import config as cf
from fedhpc_sim import hpcsim as hs

scenario = cf.shipped("table4_queued.cfg")
facilities = {f.name: f for f in scenario.facilities}

# %% [markdown]
# ## Throughput by node count
#
# Curves are interpolated log-log between calibration points. Polaris
# saturates early; Aurora keeps scaling.

# %%
nodes = [1, 2, 4, 8, 16, 32, 48, 64]
print(f"{'nodes':>6}" + "".join(f"{n:>12}" for n in facilities))
for n in nodes:
    row = [hs.throughput(f, n) for f in facilities.values()]
    print(f"{n:>6}" + "".join(f"{t:>12.1f}" for t in row))

# %% [markdown]
# Seconds per local step at the scenario's two-node allocation, and how long
# 100 steps take once the job is running.

# %%
for f in facilities.values():
    print(f"{f.name:<11} eff batch {f.effective_batch:>4}  "
          f"{hs.seconds_per_step(f):6.2f} s/step  100 steps: {hs.training_duration(f, 100):7.1f} s")

# %% [markdown]
# ## Transfers
#
# Effective bandwidth rises with payload size as connection setup is
# amortized. The 7B-parameter bf16 checkpoint is 14 GB.

# %%
sizes = [10, 100, 250, 1000, 5000, 14000, 26000]
print(f"{'MB':>7}" + "".join(f"{n:>12}" for n in facilities))
for s in sizes:
    print(f"{s:>7}" + "".join(f"{hs.effective_bandwidth(f, s):>12.1f}" for f in facilities.values()))

speeds = [hs.effective_bandwidth(f, 26000) for f in facilities.values()]
print(f"\ngap between fastest and slowest at 26000 MB: {max(speeds) - min(speeds):.1f} MB/s")
print(f"model size: {hs.model_size_mb(scenario.schedule.model_param_count):.0f} MB")

# %% [markdown]
# ## Queue waits
#
# Lognormal waits whose median grows steeply with node count. Aurora's base
# median is ten times the others, which makes it the straggler.

# %%
rng = np.random.default_rng(0)
for name, f in facilities.items():
    draws = np.array([hs.sample_queue_wait(f.queue, f.nodes, rng) for _ in range(5000)])
    q10, q50, q90 = np.percentile(draws, [10, 50, 90])
    print(f"{name:<11} {f.nodes} nodes: p10 {q10:7.0f} s  median {q50:7.0f} s  p90 {q90:7.0f} s")

pol = facilities["Polaris"]
for n in (1, 4, 16, 32, 64):
    print(f"Polaris median at {n:>2} nodes: {pol.queue.median_at(n) / 3600:8.2f} h")
