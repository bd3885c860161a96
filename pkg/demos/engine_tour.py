"""Tour of the live engine: load, churn, switch, and read the same
answer through every access path."""

from htaplite.bench import q6_plan
from htaplite.config import RunConfig
from htaplite.experiments import EngineRig
from htaplite.olap import AccessPath, AccessPathPlan, choose_access_paths, execute
from htaplite.rde import ISOLATED

# A desk-scale load: scale factor 0.2 over the 10k divisor gives an
# orderline table of 120 rows, small enough to eyeball.
cfg = RunConfig(scale_factor=0.2, seed=7)
rig = EngineRig(cfg)

print("tables loaded:")
for name in ("orderline", "orders", "item", "stock", "warehouse"):
    print("  %-10s %6d rows" % (name, rig.db.table(name).committed_rows))

# The rig starts consolidated, so the analytical copy is fully fresh.
print("freshness after load: %.2f" % rig.ctl.freshness().freshness_rate)

# Run some NewOrder traffic. Inserts and updates land in the
# transactional store only, so the analytical copy goes stale.
rig.churn(40)
stats = rig.ctl.freshness()
print("freshness after 40 transactions: %.3f" % stats.freshness_rate)
print("fresh bytes in the database: %d" % stats.n_ft)

plan = q6_plan()

# Fresh reads (S3 isolated): the planner must reach over to the
# transactional snapshot because the analytical copy is behind.
state = rig.ctl.migrate_state_s3(ISOLATED)
paths = choose_access_paths(plan, rig.ctl.freshness(plan), state)
print("paths while stale:",
      {col: p.name for (_, col), p in paths.per_column.items()})
remote = execute(plan, paths, rig.ctl.olap, rig.ctl.handles)

# Forcing every column REMOTE is always legal and gives the oracle.
all_remote = AccessPathPlan(
    per_column={key: AccessPath.REMOTE for key in paths.per_column},
    table_rows=paths.table_rows, execution_cpus=paths.execution_cpus,
    epoch=paths.epoch)
oracle = execute(plan, all_remote, rig.ctl.olap, rig.ctl.handles)
print("planner result %r == forced-remote result %r" %
      (remote.scalar("sum(ol_amount)"), oracle.scalar("sum(ol_amount)")))

# ETL (S2) copies the delta across; afterwards everything reads LOCAL
# and the answer does not move.
state = rig.ctl.migrate_state_s2()
print("etl copied %d bytes, freshness back to %.2f" %
      (rig.ctl.last_etl_bytes, rig.ctl.freshness().freshness_rate))
paths = choose_access_paths(plan, rig.ctl.freshness(plan), state)
local = execute(plan, paths, rig.ctl.olap, rig.ctl.handles)
print("paths after etl:",
      {col: p.name for (_, col), p in paths.per_column.items()})
assert local.scalar("sum(ol_amount)") == oracle.scalar("sum(ol_amount)")
print("local result matches: %r" % local.scalar("sum(ol_amount)"))
