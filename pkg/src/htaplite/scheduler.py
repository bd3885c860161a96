"""Freshness-driven state selection.

The decision rule is a four-way branch on the ratio of query-relevant
fresh bytes to total fresh bytes:

    if n_fq < alpha * n_ft and not batch:
        S3-IS when elasticity is unavailable,
        S3-NI when available in hybrid mode,
        S1    when available in colocation mode
    else:
        S2

decide() is the pure rule; resource_schedule() additionally invokes
the matching migration, and run_query()/schedule_batch() wrap the
full admission path: stats, decision, migration, path choice,
execution.
"""

from dataclasses import dataclass
from types import SimpleNamespace

from .olap import choose_access_paths, execute
from .rde import ISOLATED, NON_ISOLATED, OLAP, OLTP, S1, S2, S3_IS, S3_NI

HYBRID = "hybrid"
COLOCATION = "colocation"


class SchedulerError(Exception):
    pass


@dataclass(frozen=True)
class SchedulerConfig:
    alpha: float = 0.5
    f_el: bool = False
    m_el: str = HYBRID

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SchedulerError("alpha must lie in [0, 1]")
        if self.m_el not in (HYBRID, COLOCATION):
            raise SchedulerError("unknown elasticity mode %r" % self.m_el)


@dataclass(frozen=True)
class SchedulerInput:
    n_fq: int
    n_ft: int
    is_batch: bool = False

    def __post_init__(self):
        if self.n_fq < 0 or self.n_ft < 0:
            raise SchedulerError("fresh byte counts cannot be negative")
        if self.n_fq > self.n_ft:
            raise SchedulerError("a query cannot need more fresh bytes "
                                 "than the database holds")


def decide(inp, cfg):
    """Pure decision rule; returns a state tag."""
    if inp.n_fq < cfg.alpha * inp.n_ft and not inp.is_batch:
        if not cfg.f_el:
            return S3_IS
        if cfg.m_el == HYBRID:
            return S3_NI
        return S1
    return S2


@dataclass
class DecisionRecord:
    query: str
    epoch: int
    n_fq: int
    n_ft: int
    alpha: float
    f_el: bool
    m_el: str
    is_batch: bool
    state: str


DECISION_COLUMNS = ("query", "epoch", "n_fq", "n_ft", "alpha",
                    "f_el", "m_el", "is_batch", "state")


class DecisionLog:
    def __init__(self):
        self.records = []

    def append(self, record):
        self.records.append(record)

    def rows(self):
        return [[getattr(r, c) for c in DECISION_COLUMNS] for r in self.records]


def _invoke_migration(controller, tag):
    if tag == S2:
        return controller.migrate_state_s2()
    if tag == S1:
        return controller.migrate_state_s1()
    if tag == S3_IS:
        return controller.migrate_state_s3(ISOLATED)
    return controller.migrate_state_s3(NON_ISOLATED)


def resource_schedule(inp, cfg, controller, log=None, query_name=""):
    """Decide on the given fresh-byte counts and perform the migration."""
    tag = decide(inp, cfg)
    state = _invoke_migration(controller, tag)
    if log is not None:
        log.append(DecisionRecord(
            query=query_name, epoch=state.epoch, n_fq=inp.n_fq, n_ft=inp.n_ft,
            alpha=cfg.alpha, f_el=cfg.f_el, m_el=cfg.m_el,
            is_batch=inp.is_batch, state=state.tag))
    return state


def _execution_topology(controller):
    topo = controller.ledger.topology
    oltp = controller.ledger.cpus(OLTP)
    olap = controller.ledger.cpus(OLAP)
    return SimpleNamespace(
        socket_of=topo.socket_of,
        oltp_socket=topo.socket_of(oltp[0]) if oltp else 0,
        olap_socket=topo.socket_of(olap[-1]) if olap else 0,
    )


def run_query(plan, cfg, controller, log=None, worker_count=None):
    """Full admission path for one query.

    Returns (state, result, pre-decision stats). The decision reads
    freshness against the live committed position; the migration then
    freezes a new snapshot, and paths are planned against
    post-migration stats.
    """
    stats_pre = controller.freshness(plan)
    inp = SchedulerInput(n_fq=stats_pre.n_fq, n_ft=stats_pre.n_ft)
    state = resource_schedule(inp, cfg, controller, log=log,
                              query_name=plan.name)
    stats_post = controller.freshness(plan)
    paths = choose_access_paths(plan, stats_post, state)
    result = execute(plan, paths, controller.olap, controller.handles,
                     worker_count=worker_count,
                     topology=_execution_topology(controller))
    return state, result, stats_pre


def union_fresh_bytes(plans, stats):
    """Fresh bytes across a batch, each physical cell counted once."""
    seen = set()
    total = 0
    for plan in plans:
        for table, col in plan.scanned_columns():
            if (table, col) in seen:
                continue
            seen.add((table, col))
            total += (stats.insert_tail(table)
                      + stats.updated_rows(table, col)) * stats.column_width(table, col)
    return total


def schedule_batch(plans, cfg, controller, log=None, worker_count=None):
    """One decision, one switch, one ETL for a whole set of queries.

    All queries then run with LOCAL paths over the same epoch. Returns
    (state, list of (plan, result)).
    """
    if not plans:
        raise SchedulerError("a batch needs at least one query")
    stats_pre = controller.freshness()
    inp = SchedulerInput(n_fq=union_fresh_bytes(plans, stats_pre),
                         n_ft=stats_pre.n_ft, is_batch=True)
    state = resource_schedule(inp, cfg, controller, log=log,
                              query_name="batch[%d]" % len(plans))
    results = []
    topo = _execution_topology(controller)
    for plan in plans:
        stats_post = controller.freshness(plan)
        paths = choose_access_paths(plan, stats_post, state)
        results.append((plan, execute(plan, paths, controller.olap,
                                      controller.handles,
                                      worker_count=worker_count,
                                      topology=topo)))
    return state, results
