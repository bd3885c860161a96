"""Writers never block readers: four worker threads hammer NewOrder
while the control thread keeps flipping snapshots and scanning them.

Every NewOrder moves quantity from stock rows into orderline rows, so
on any transactionally consistent snapshot the two totals add back up
to the initial stock. A snapshot that caught a transaction halfway
would break the sum."""

from htaplite.bench import INITIAL_STOCK_QUANTITY, BenchConfig, \
    build_database, load_initial_data
from htaplite.olap import AccessPath, AccessPathPlan, Predicate, QueryPlan, \
    execute
from htaplite.rde import sync_pass
from htaplite.txn import TransactionManager, WorkerPool

bcfg = BenchConfig(scale_factor=2.0, divisor=10_000, seed=3)
db = load_initial_data(build_database(bcfg), bcfg)
mgr = TransactionManager(db)

initial_stock = bcfg.warehouses * bcfg.items * INITIAL_STOCK_QUANTITY
print("%d warehouses x %d items, %d units on the shelves" %
      (bcfg.warehouses, bcfg.items, initial_stock))

# Workload ids are built as (worker << 32) | seq, far below the ids
# the initial loader used, so this predicate isolates workload orders.
workload_ids = Predicate(conditions=(("ol_o_id", None, 1 << 40),))
stock_plan = QueryPlan(
    name="on-shelf", shape="scan-filter-reduce",
    scans=[("stock", ["s_quantity"], None)],
    aggregates=[("s_quantity", "sum")])
ordered_plan = QueryPlan(
    name="ordered", shape="scan-filter-reduce",
    scans=[("orderline", ["ol_o_id", "ol_quantity"], workload_ids)],
    aggregates=[("ol_quantity", "sum")])


def remote_paths(handles, plan):
    per_column = {key: AccessPath.REMOTE for key in plan.scanned_columns()}
    table_rows = {t: (0, handles[t].committed_count)
                  for t, _ in plan.scanned_columns()}
    return AccessPathPlan(per_column=per_column, table_rows=table_rows,
                          execution_cpus=frozenset(range(4, 8)),
                          epoch=next(iter(handles.values())).epoch)


# 400 commits per worker, then the threads retire on their own.
pool = WorkerPool(mgr, db, seed=3, warehouses=bcfg.warehouses,
                  items=bcfg.items, txn_budget=400)
pool.set_worker_count([0, 1, 2, 3])

scans = 0
while True:
    done = pool.wait_budget_done(timeout=0.01)
    # flip every table, then converge the copy we just retired
    out = db.switch_all()
    handles = {}
    for name, (handle, stats) in out.items():
        handles[name] = handle
        if stats.any_updates:
            sync_pass(db.table(name), handle.committed_count)
    shelf = execute(stock_plan, remote_paths(handles, stock_plan),
                    None, handles).scalar("sum(s_quantity)")
    ordered = execute(ordered_plan, remote_paths(handles, ordered_plan),
                      None, handles).scalar("sum(ol_quantity)")
    assert shelf + ordered == initial_stock, (shelf, ordered)
    scans += 1
    if scans % 10 == 0 or done:
        print("scan %3d: shelf %8d + ordered %7d = %d (committed so far %d)"
              % (scans, shelf, ordered, shelf + ordered,
                 pool.committed_count()))
    if done:
        break

print("%d transactions, %d mid-flight snapshots, conservation held on"
      " every one" % (pool.committed_count(), scans))
