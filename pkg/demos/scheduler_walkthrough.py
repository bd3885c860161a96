"""How the admission rule picks a state, and what one admission does
to the engine underneath it."""

from htaplite.bench import q1_plan, q6_plan, q19_plan
from htaplite.config import RunConfig
from htaplite.scheduler import (
    COLOCATION, HYBRID, DecisionLog, SchedulerConfig, SchedulerInput,
    decide, run_query,
)
from htaplite.experiments import EngineRig

# The rule compares the fresh bytes this query touches (n_fq) against
# a fraction of the fresh bytes in the whole database (n_ft). Below
# the threshold it serves fresh data in place; at or above it pays for
# a full delta copy first.
for frac in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
    inp = SchedulerInput(n_fq=int(frac * 1000), n_ft=1000)
    row = []
    for alpha in (0.25, 0.5, 0.75):
        cfg = SchedulerConfig(alpha=alpha)
        row.append("alpha=%.2f -> %-5s" % (alpha, decide(inp, cfg)))
    print("query touches %3d%% of fresh data: %s" % (frac * 100, "  ".join(row)))

# Elastic options only change the serve-in-place branch. With the
# elasticity flag up, hybrid mode borrows transaction-side cores
# (S3-NI) and colocation mode trades them outright (S1).
inp = SchedulerInput(n_fq=100, n_ft=1000)
print()
print("same cheap query under the elastic variants:")
print("  no elasticity      ->", decide(inp, SchedulerConfig(alpha=0.5)))
print("  hybrid borrowing   ->", decide(inp, SchedulerConfig(
    alpha=0.5, f_el=True, m_el=HYBRID)))
print("  colocation trading ->", decide(inp, SchedulerConfig(
    alpha=0.5, f_el=True, m_el=COLOCATION)))

# A batch always consolidates, however little it touches.
print("  batched            ->", decide(
    SchedulerInput(n_fq=100, n_ft=1000, is_batch=True),
    SchedulerConfig(alpha=0.5)))

# Now the live path: churn between queries so each admission sees a
# different fresh picture, and log what the rule decided.
run_cfg = RunConfig(scale_factor=0.5, seed=11, alpha=0.5)
rig = EngineRig(run_cfg)
sched_cfg = run_cfg.scheduler_config()
log = DecisionLog()

print()
print("live admissions (churn between each):")
for plan_fn in (q6_plan, q1_plan, q19_plan, q6_plan):
    rig.churn(30)
    state, result, stats = run_query(plan_fn(), sched_cfg, rig.ctl, log=log)
    print("  %-4s touched %6d of %6d fresh bytes -> %s" %
          (plan_fn().name, stats.n_fq, stats.n_ft, state.tag))

print()
print("decision log rows:")
for rec in log.records:
    print("  query=%-9s n_fq=%-6d n_ft=%-6d state=%s" %
          (rec.query, rec.n_fq, rec.n_ft, rec.state))
