"""Parametric cost model and sequence simulator for scheduling policies.

Times are synthetic: bandwidth arithmetic over byte counts plus a few
calibrated penalties. Decisions are not. The simulator feeds real
freshness statistics through the real decision rule and the real
access-path choice, so a trace's states and paths are exactly what the
live engine would produce; only durations are modeled.

Scan rates are capped twice: by the bus (memory or interconnect) and by
what the granted cores can stream. Cores streaming remote memory run at
a discounted rate, which is what makes staying split eventually lose to
consolidating: with ample cores remote reads cost bytes over the
interconnect bandwidth, with few cores they cost more.
"""

import math
from dataclasses import dataclass, field

from .olap import AccessPath, choose_access_paths, fresh_bytes_for_query
from .rde import (OLAP, OLTP, S1, S2, S3_IS, STATE_TAGS, FreshnessStats,
                  ResourceLedger, SystemState, assignment_s1, assignment_s2,
                  make_topology)
from .scheduler import SchedulerInput, decide

ADAPTIVE = "adaptive"

DEFAULT_SOCKETS = 2
DEFAULT_CPUS_PER_SOCKET = 14


@dataclass
class CostParams:
    """Bandwidths, per-core rates, and calibrated penalty factors.

    The interconnect runs at half the per-socket memory bandwidth.
    Transactional throughput at full local residence drops by up to 37%
    when every worker runs on the remote socket, and to a 55% total drop
    when analytical scans pull on the home memory bus at the same time;
    the interference factor stacks multiplicatively to hit that total.
    The order-entry schema is fixed-width, so scanned bytes are rows
    times a uniform cell width.
    """

    mem_bw: float = 100e9                # bytes/sec one socket's memory bus
    ic_bw: float = 50e9                  # bytes/sec across the interconnect
    per_core_scan_rate: float = 1.15e9   # bytes/sec one core can stream
    remote_core_efficiency: float = 0.4  # core discount on remote memory
    oltp_base_tps: float = 100_000.0     # at full local residence
    oltp_remote_penalty: float = 0.37
    oltp_olap_interference_penalty: float = 2.0 / 7.0   # 0.63*(1-2/7) = 0.45
    join_random_access_rate: float = 50e6   # probe tuples/sec one core
    groupby_seconds_per_group: float = 1e-6
    sync_seconds_per_million_tuples: float = 0.010
    column_width_bytes: int = 8

    def __post_init__(self):
        for name in ("mem_bw", "ic_bw", "per_core_scan_rate",
                     "oltp_base_tps", "join_random_access_rate"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)
        for name in ("oltp_remote_penalty", "oltp_olap_interference_penalty"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError("%s must lie in [0, 1)" % name)
        if not 0.0 < self.remote_core_efficiency <= 1.0:
            raise ValueError("remote_core_efficiency must lie in (0, 1]")
        if self.ic_bw > self.mem_bw:
            raise ValueError("interconnect cannot outrun the memory bus")

    @property
    def bw_ratio(self):
        return self.mem_bw / self.ic_bw


def local_scan_rate(cores, params):
    return min(params.mem_bw, cores * params.per_core_scan_rate)


def remote_scan_rate(cores, params):
    return min(params.ic_bw, cores * params.per_core_scan_rate
               * params.remote_core_efficiency)


def estimate_query_time(plan, paths, state, ledger, params, groups=None):
    """Seconds to run the plan given per-column access paths.

    Local and remote byte streams overlap (the slower one bounds), except
    in the consolidated state where copy-then-execute serializes them.
    Join shapes add a probe term, group-bys a small per-group cache term.
    """
    cores = len(state.olap_cpus)
    if cores == 0:
        raise ValueError("no CPUs granted to the analytical side")
    width = params.column_width_bytes
    local_bytes = 0
    remote_bytes = 0
    for table, col in plan.scanned_columns():
        wm, cc = paths.table_rows[table]
        path = paths.path(table, col)
        if path is AccessPath.LOCAL:
            local_bytes += cc * width
        elif path is AccessPath.REMOTE:
            remote_bytes += cc * width
        else:
            local_bytes += wm * width
            remote_bytes += (cc - wm) * width
    t_local = local_bytes / local_scan_rate(cores, params)
    t_remote = remote_bytes / remote_scan_rate(cores, params)
    if state.tag == S2:
        total = t_local + t_remote
    else:
        total = max(t_local, t_remote)
    if plan.shape == "fact-dimension-join":
        _, cc = paths.table_rows[plan.fact_table]
        total += cc / (cores * params.join_random_access_rate)
    if plan.groupby_keys:
        if groups is None:
            groups = 16
        total += groups * params.groupby_seconds_per_group
    return total


def estimate_etl_time(nbytes, params):
    """Seconds to copy a delta across the interconnect."""
    if nbytes < 0:
        raise ValueError("cannot copy a negative byte count")
    return nbytes / params.ic_bw


def estimate_sync_time(tuples, params):
    """Seconds the post-switch row sync spends converging updated rows."""
    return tuples / 1e6 * params.sync_seconds_per_million_tuples


def estimate_oltp_tps(state, ledger, olap_active, params):
    """Transactional throughput under the given placement.

    base * cores_fraction * (1 - remote_penalty * remote_mix)
         * (1 - interference_penalty * olap_pressure)

    remote_mix is the share of a full home allocation running on foreign
    sockets. olap_pressure is zero when analytics is absent or fully
    isolated with a consolidated copy; it ramps with analytical cores
    placed on home sockets (saturating at half a socket of scanners),
    and for the isolated-but-stale state it is the interconnect's share
    of the home memory bus, since fresh rows stream out over it.
    """
    topo = ledger.topology
    home = set()
    for s in range(ledger.oltp_sock_thres):
        home.update(topo.sockets[s])
    oltp = set(state.oltp_cpus)
    local = len(oltp & home)
    remote = len(oltp) - local
    baseline = len(home)
    cores_fraction = min(1.0, len(oltp) / baseline)
    remote_mix = min(1.0, remote / baseline)
    tps = params.oltp_base_tps * cores_fraction
    tps *= 1.0 - params.oltp_remote_penalty * remote_mix
    pressure = 0.0
    if olap_active and state.tag != S2:
        if state.tag == S3_IS:
            pressure = params.ic_bw / params.mem_bw
        else:
            scanners = len(set(state.olap_cpus) & home)
            pressure = min(1.0, scanners / (baseline / 2.0))
    tps *= 1.0 - params.oltp_olap_interference_penalty * pressure
    return tps


# -- synthetic database ------------------------------------------------------


def occupancy(n, events):
    """Expected distinct rows hit by `events` uniform updates over n rows."""
    if n <= 0 or events <= 0:
        return 0.0
    if n == 1:
        return 1.0
    return -n * math.expm1(events * math.log1p(-1.0 / n))


class SimTable:
    """Row counts and update-event counters standing in for a real table.

    Update events are assumed uniform over the rows present when they
    land; distinct-row counts come from the occupancy expectation, so
    billions of events track in O(1). Updates below the watermark feed
    freshness; all updates feed the switch-sync charge.
    """

    def __init__(self, name, rows, columns, width=8):
        self.name = name
        self.rows = rows
        self.wm = rows          # loaded data starts synchronized
        self.columns = tuple(columns)
        self.width = width
        self._below_etl = {c: 0.0 for c in self.columns}
        self._since_switch = {c: 0.0 for c in self.columns}

    def insert(self, n):
        if n < 0:
            raise ValueError("cannot insert a negative row count")
        self.rows += n

    def update(self, column, events):
        if events < 0:
            raise ValueError("cannot apply a negative event count")
        if self.rows > 0:
            self._below_etl[column] += events * (self.wm / self.rows)
        self._since_switch[column] += events

    def updated_below_wm(self, column):
        return occupancy(self.wm, self._below_etl[column])

    def sync_tuples(self):
        if not self.columns:
            return 0.0
        return max(occupancy(self.rows, ev)
                   for ev in self._since_switch.values())

    def clear_switch(self):
        self._since_switch = {c: 0.0 for c in self.columns}

    def clear_etl(self):
        self.wm = self.rows
        self._below_etl = {c: 0.0 for c in self.columns}


class SimDb:
    """A set of SimTables plus the epoch counter the path rules expect."""

    def __init__(self):
        self.epoch = 0
        self.tables = {}

    def add_table(self, name, rows, columns, width=8):
        self.tables[name] = SimTable(name, rows, columns, width)
        return self.tables[name]

    def insert(self, table, n):
        self.tables[table].insert(n)

    def update(self, table, column, events):
        self.tables[table].update(column, events)

    def stats(self, plan=None):
        out = FreshnessStats(epoch=self.epoch)
        for t in self.tables.values():
            updated = {c: t.updated_below_wm(c) for c in t.columns}
            widths = {c: t.width for c in t.columns}
            dirty = max(updated.values()) if updated else 0.0
            out.add_table(t.name, t.wm, t.rows, updated, widths, dirty)
        if plan is not None:
            out.n_fq = fresh_bytes_for_query(plan, out)
        return out

    def fresh_bytes(self):
        return self.stats().n_ft

    def switch(self):
        """Advance the epoch; return tuples the sync pass must converge."""
        self.epoch += 1
        tuples = sum(t.sync_tuples() for t in self.tables.values())
        for t in self.tables.values():
            t.clear_switch()
        return tuples

    def etl(self):
        """Consolidate everything; return bytes copied."""
        copied = self.fresh_bytes()
        for t in self.tables.values():
            t.clear_etl()
        return copied


# -- sequence simulation -----------------------------------------------------


@dataclass(frozen=True)
class StepGrowth:
    """Fresh data arriving in one step: rows per table, events per column."""

    inserts: dict = field(default_factory=dict)     # table -> rows
    updates: dict = field(default_factory=dict)     # (table, column) -> events

    def apply(self, simdb):
        for table, n in self.inserts.items():
            simdb.insert(table, n)
        for (table, column), events in self.updates.items():
            simdb.update(table, column, events)


@dataclass
class SimEvent:
    step: int
    query: str
    state: str
    n_fq: float
    n_ft: float
    etl_seconds: float
    exec_seconds: float
    oltp_tps: float


TRACE_COLUMNS = ("step", "query", "state", "n_fq", "n_ft",
                 "etl_s", "exec_s", "cum_olap_s", "oltp_tps")


class SimTrace:
    def __init__(self):
        self.events = []

    def append(self, event):
        if event.etl_seconds < 0 or event.exec_seconds < 0:
            raise ValueError("simulated times cannot be negative")
        if self.events and event.step < self.events[-1].step:
            raise ValueError("trace must advance in logical time")
        self.events.append(event)

    @property
    def cumulative_olap_seconds(self):
        return sum(e.etl_seconds + e.exec_seconds for e in self.events)

    def rows(self):
        """Rows matching TRACE_COLUMNS, with a running analytical total."""
        cum = 0.0
        out = []
        for e in self.events:
            cum += e.etl_seconds + e.exec_seconds
            out.append((e.step, e.query, e.state, e.n_fq, e.n_ft,
                        e.etl_seconds, e.exec_seconds, cum, e.oltp_tps))
        return out


def _assignment_for(tag, topology, elastic_grant):
    size = len(topology.sockets[0])
    if tag in (S2, S3_IS):
        return assignment_s2(topology, 1)
    if tag == S1:
        # trade: analytics takes grant cores at home, cedes as many remote
        thres = [size - elastic_grant, elastic_grant]
        thres += [0] * (topology.socket_count - 2)
        return assignment_s1(topology, tuple(thres))
    # S3-NI grant: analytics keeps its sockets and borrows at home
    thres = [size - elastic_grant] + [0] * (topology.socket_count - 1)
    return assignment_s1(topology, tuple(thres))


def run_sequence(workload, policy, cfg, params, simdb=None, topology=None,
                 elastic_grant=4):
    """Drive a workload through the admission loop with synthetic time.

    workload is a list of (plan, StepGrowth); each step applies its
    growth, decides a state (the real rule under `adaptive`, the forced
    tag otherwise), pays switch-sync (every state) and the delta copy
    (consolidated state only), then charges execution over the access
    paths the real rules pick. Returns the trace.
    """
    if not workload:
        raise ValueError("workload must not be empty")
    if policy != ADAPTIVE and policy not in STATE_TAGS:
        raise ValueError("unknown policy %r" % policy)
    if simdb is None:
        simdb = SimDb()
        for plan, _ in workload:
            for table, columns, _ in plan.scans:
                if table not in simdb.tables:
                    simdb.add_table(table, 0, columns,
                                    width=params.column_width_bytes)
    topo = topology or make_topology(DEFAULT_SOCKETS, DEFAULT_CPUS_PER_SOCKET)
    ledger = ResourceLedger(topo, oltp_sock_thres=1,
                            elastic_grant=elastic_grant)
    trace = SimTrace()
    for step, (plan, growth) in enumerate(workload):
        growth.apply(simdb)
        stats_pre = simdb.stats(plan)
        n_fq, n_ft = stats_pre.n_fq, stats_pre.n_ft
        if policy == ADAPTIVE:
            tag = decide(SchedulerInput(n_fq=n_fq, n_ft=n_ft), cfg)
        else:
            tag = policy
        ledger.apply(_assignment_for(tag, topo, elastic_grant))
        ledger.assert_valid(tag)
        etl_s = estimate_sync_time(simdb.switch(), params)
        if tag == S2:
            etl_s += estimate_etl_time(simdb.etl(), params)
        state = SystemState(tag=tag, epoch=simdb.epoch,
                            oltp_cpus=frozenset(ledger.cpus(OLTP)),
                            olap_cpus=frozenset(ledger.cpus(OLAP)))
        paths = choose_access_paths(plan, simdb.stats(plan), state)
        exec_s = estimate_query_time(plan, paths, state, ledger, params)
        tps = estimate_oltp_tps(state, ledger, True, params)
        trace.append(SimEvent(step, plan.name, tag, n_fq, n_ft,
                              etl_s, exec_s, tps))
    return trace
