# %% [markdown]
# # Reading an event trace
#
# Where the wall-clock goes for one FedCompass run: queue wait, compute and
# transfer per local round, and which clients shared an aggregation.

# %%
from collections import Counter

from fedhpc_sim import config as cf
from fedhpc_sim import orchestrator as orch

scenario = cf.shipped("table4_queued.cfg")
trace = []
log = orch.run_scenario(scenario, trace)
print(Counter(ev.kind for ev in trace))

# %%
print(f"{'client':<11}{'rounds':>7}{'queue s':>10}{'train s':>10}{'xfer s':>9}")
for cid in log.client_ids:
    recs = [r for r in log.local_records if r.client_id == cid]
    q = sum(r.queue_wait_s for r in recs)
    t = sum(r.train_s for r in recs)
    x = sum(2 * r.transfer_s for r in recs)
    print(f"{cid:<11}{len(recs):>7}{q:>10.0f}{t:>10.0f}{x:>9.0f}")

# %%
for r in log.aggregation_records:
    print(f"{r.sim_time_s:9.0f} s  v{r.global_version:<3} loss {r.global_loss:.4f}  {r.client_id}")
