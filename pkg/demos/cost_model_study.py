"""Three cost-model studies on synthetic time: batching the delta
copy, the split/consolidate crossover, and the adaptive rule against
every fixed policy."""

from htaplite.config import RunConfig
from htaplite.experiments import (
    crossover_bracket, mix_workload, s2_batch_rows, s3_fresh_rows,
    sim_database,
)
from htaplite.rde import S3_NI
from htaplite.simcost import ADAPTIVE, S1, S2, S3_IS, run_sequence

cfg = RunConfig()
params = cfg.cost_params()

# Study 1: one delta copy can serve a whole batch of queries, so the
# copy cost amortizes while execution time stays put.
print("batching the delta copy (16 queries):")
for size, copies, copy_s, exec_s, total_s, share in s2_batch_rows(
        params, cfg.cpus_per_socket):
    print("  batch=%-2d copies=%-2d copy=%5.2fs exec=%5.2fs"
          " total=%5.2fs copy share=%4.1f%%" %
          (size, copies, copy_s, exec_s, total_s, share * 100))

# Study 2: serving fresh data in place is cheap while little is fresh,
# but the split read degrades as the fresh fraction grows, and at some
# point copying everything across wins.
rows = s3_fresh_rows(params, cfg.cpus_per_socket)
lo, hi = crossover_bracket(rows)
print()
print("split reads lose to consolidation between fresh fractions"
      " %.2f and %.2f:" % (lo, hi))
for frac, split_s, consolidate_s, cheaper in rows:
    if abs(frac - lo) < 0.06 or abs(frac - hi) < 0.06:
        print("  fresh=%.2f split=%6.4fs consolidate=%6.4fs -> %s" %
              (frac, split_s, consolidate_s, cheaper))

# Study 3: run the same 300-step mixed workload under each fixed
# policy and under the adaptive rule. The adaptive rule consolidates
# only when a query would touch enough fresh data to justify it.
workload = mix_workload(cfg.sim_steps, cfg.sim_txns_per_step)
print()
print("cumulative analytics time over %d queries:" % cfg.sim_steps)
totals = {}
for policy in (S1, S2, S3_IS, S3_NI, ADAPTIVE):
    trace = run_sequence(workload, policy, cfg.scheduler_config(), params,
                         simdb=sim_database(cfg.scale_factor),
                         topology=cfg.topology(),
                         elastic_grant=cfg.elastic_grant_cpus)
    totals[policy] = trace.cumulative_olap_seconds
    print("  %-8s %7.3fs" % (policy, totals[policy]))

best_static = min(v for k, v in totals.items() if k != ADAPTIVE)
print("adaptive vs best fixed policy: %.3fs vs %.3fs" %
      (totals[ADAPTIVE], best_static))
print("adaptive vs always-isolated:   %.1f%% less time" %
      ((1 - totals[ADAPTIVE] / totals[S3_IS]) * 100))
