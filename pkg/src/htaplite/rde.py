"""Resource-and-data-exchange layer.

One control actor owns three concerns the engines themselves must not
touch: which CPU works for which side (the resource ledger), moving
the twin instances through switch-and-sync, and copying ETL deltas
into the analytical copy. It also produces the freshness statistics
the planner and the scheduler read.

State migrations follow a fixed menu:

  S1     co-located: every socket split between the sides, analytics
         reads the frozen twin instance in place;
  S2     isolated: whole sockets per side, ETL refreshes the
         analytical copy;
  S3-IS  isolated sockets but no ETL, analytics reads the frozen twin
         instance over the interconnect;
  S3-NI  socket split as S1 with the analytical copy left stale,
         analytics reads the frozen instance with data-local CPUs.
"""

from dataclasses import dataclass

from .olap import EpochMismatchError, OlapError, OlapInstance, fresh_bytes_for_query

S1 = "S1"
S2 = "S2"
S3_IS = "S3-IS"
S3_NI = "S3-NI"
STATE_TAGS = (S1, S2, S3_IS, S3_NI)

ISOLATED = "isolated"
NON_ISOLATED = "non-isolated"

OLTP = "oltp"
OLAP = "olap"
FREE = "free"


class LedgerError(Exception):
    pass


@dataclass(frozen=True)
class Topology:
    """Sockets as tuples of CPU ids."""

    sockets: tuple

    @property
    def socket_count(self):
        return len(self.sockets)

    def socket_of(self, cpu):
        for s, cpus in enumerate(self.sockets):
            if cpu in cpus:
                return s
        raise LedgerError("cpu %d not in topology" % cpu)

    def all_cpus(self):
        return [cpu for cpus in self.sockets for cpu in cpus]


def make_topology(socket_count, cpus_per_socket):
    return Topology(tuple(
        tuple(range(s * cpus_per_socket, (s + 1) * cpus_per_socket))
        for s in range(socket_count)))


def default_cpu_thres(topology, oltp_sock_thres, elastic_grant):
    """Per-socket OLTP minima: keep all but the elastic grant on OLTP
    sockets, nothing on analytical sockets."""
    return tuple(
        max(0, len(cpus) - elastic_grant) if s < oltp_sock_thres else 0
        for s, cpus in enumerate(topology.sockets))


def assignment_s1(topology, oltp_cpu_thres):
    """Per-socket split: lowest ids to OLTP up to the threshold, rest OLAP."""
    if len(oltp_cpu_thres) != topology.socket_count:
        raise LedgerError("need one OLTP CPU threshold per socket")
    asg = {}
    olap_total = 0
    for s, cpus in enumerate(topology.sockets):
        take = oltp_cpu_thres[s]
        if take > len(cpus):
            raise LedgerError("threshold %d exceeds socket %d size %d"
                              % (take, s, len(cpus)))
        for i, cpu in enumerate(sorted(cpus)):
            asg[cpu] = OLTP if i < take else OLAP
        olap_total += len(cpus) - take
    if olap_total == 0:
        raise LedgerError("the analytical side must keep at least one CPU")
    return asg


def assignment_s2(topology, oltp_sock_thres):
    """Whole-socket split: the first oltp_sock_thres sockets to OLTP."""
    if oltp_sock_thres < 1:
        raise LedgerError("the transactional side needs at least one socket")
    if oltp_sock_thres >= topology.socket_count:
        raise LedgerError("no socket left for the analytical side")
    asg = {}
    for s, cpus in enumerate(topology.sockets):
        role = OLTP if s < oltp_sock_thres else OLAP
        for cpu in cpus:
            asg[cpu] = role
    return asg


class ResourceLedger:
    """Who owns each CPU, plus the floor the transactional side keeps."""

    def __init__(self, topology, oltp_sock_thres=1, oltp_cpu_thres=None,
                 elastic_grant=4):
        self.topology = topology
        self.oltp_sock_thres = oltp_sock_thres
        if oltp_cpu_thres is None:
            oltp_cpu_thres = default_cpu_thres(topology, oltp_sock_thres,
                                               elastic_grant)
        if len(oltp_cpu_thres) != topology.socket_count:
            raise LedgerError("need one OLTP CPU threshold per socket")
        for s, t in enumerate(oltp_cpu_thres):
            if t > len(topology.sockets[s]):
                raise LedgerError("threshold %d exceeds socket %d" % (t, s))
        self.oltp_cpu_thres = tuple(oltp_cpu_thres)
        self.assignment = {cpu: FREE for cpu in topology.all_cpus()}

    def apply(self, assignment):
        if set(assignment) != set(self.assignment):
            raise LedgerError("assignment must cover every CPU exactly once")
        self.assignment = dict(assignment)

    def cpus(self, role):
        return sorted(cpu for cpu, r in self.assignment.items() if r == role)

    def per_socket(self, role):
        out = []
        for cpus in self.topology.sockets:
            out.append(sum(1 for c in cpus if self.assignment[c] == role))
        return out

    def snapshot(self):
        return dict(self.assignment)

    def assert_valid(self, tag):
        """Conservation plus the per-state threshold floor."""
        if set(self.assignment) != set(self.topology.all_cpus()):
            raise LedgerError("assignment does not cover the topology")
        for role in self.assignment.values():
            if role not in (OLTP, OLAP, FREE):
                raise LedgerError("unknown role %r" % role)
        oltp_per_socket = self.per_socket(OLTP)
        if tag in (S1, S3_NI):
            for s, have in enumerate(oltp_per_socket):
                if have < self.oltp_cpu_thres[s]:
                    raise LedgerError(
                        "socket %d holds %d OLTP CPUs, floor is %d"
                        % (s, have, self.oltp_cpu_thres[s]))
        else:
            whole = sum(1 for s, cpus in enumerate(self.topology.sockets)
                        if oltp_per_socket[s] == len(cpus))
            if whole < self.oltp_sock_thres:
                raise LedgerError("only %d whole OLTP sockets, floor is %d"
                                  % (whole, self.oltp_sock_thres))


@dataclass(frozen=True)
class SystemState:
    tag: str
    epoch: int
    oltp_cpus: frozenset
    olap_cpus: frozenset


class FreshnessStats:
    """How far the analytical copy lags the transactional state.

    Per table: the insert tail above the watermark; per column: rows
    updated below it. N_ft charges width per stale cell, each cell
    once. The freshness rate is the share of identical tuples.
    """

    def __init__(self, epoch):
        self.epoch = epoch
        self._counts = {}        # table -> (watermark, oltp_count)
        self._updated = {}       # (table, column) -> rows below watermark
        self._widths = {}        # (table, column) -> bytes
        self._dirty_rows = {}    # table -> distinct updated rows below wm
        self.n_fq = None

    def add_table(self, table, watermark, oltp_count, updated, widths,
                  dirty_row_count):
        self._counts[table] = (watermark, oltp_count)
        for col, n in updated.items():
            self._updated[(table, col)] = n
        for col, w in widths.items():
            self._widths[(table, col)] = w
        self._dirty_rows[table] = dirty_row_count

    def tables(self):
        return list(self._counts)

    def watermark(self, table):
        return self._counts[table][0]

    def oltp_count(self, table):
        return self._counts[table][1]

    def insert_tail(self, table):
        wm, cc = self._counts[table]
        return cc - wm

    def updated_rows(self, table, column):
        return self._updated.get((table, column), 0)

    def column_width(self, table, column):
        return self._widths[(table, column)]

    @property
    def n_ft(self):
        total = 0
        for (table, col), width in self._widths.items():
            total += (self.insert_tail(table) + self.updated_rows(table, col)) * width
        return total

    @property
    def freshness_rate(self):
        total = sum(cc for _, cc in self._counts.values())
        if total == 0:
            return 1.0
        identical = sum(wm - self._dirty_rows[t]
                        for t, (wm, _) in self._counts.items())
        return identical / total


def sync_pass(store, fence):
    """Converge set update bits below the fence onto the active copy."""
    synced = 0
    for row in store.bitmap.set_rows(limit=fence):
        if store.sync_row(row):
            synced += 1
    return synced


def switch_and_sync(store, after_switch=None):
    """Switch the twin instances, then converge them.

    The per-column flags captured at the switch act as the update
    presence check: with no updates recorded the bit scan is skipped
    outright. after_switch is a test seam between the two steps.
    """
    handle, stats = store.switch()
    if after_switch is not None:
        after_switch()
    if stats.any_updates:
        sync_pass(store, handle.committed_count)
    return handle, stats


def etl_delta(store, olap):
    """Copy what the analytical copy lacks; returns bytes moved.

    Insert tails move column-at-a-time in contiguous ranges; updated
    rows move cell-at-a-time. Consumed dirty tracking is cleared, so
    running this twice in a row copies nothing the second time.
    """
    handle = store.current_frozen
    if handle is None:
        raise OlapError("no frozen handle to extract from")
    olap.ensure_table(store.name, handle.schema)
    if olap.epoch_synced > handle.epoch:
        raise EpochMismatchError(
            "analytical copy at epoch %d is newer than handle epoch %d"
            % (olap.epoch_synced, handle.epoch))
    wm = olap.watermark[store.name]
    copied = 0
    for cs in store.schema:
        rows = store.sealed_dirty_rows(cs.name)
        below = sorted(r for r in rows if r < wm)
        if below:
            copied += olap.overwrite_from(store.name, handle, cs.name, below)
        if rows:
            store.consume_sealed_dirty(cs.name, set(rows))
    copied += olap.append_from(store.name, handle, handle.committed_count)
    olap.epoch_synced = handle.epoch
    return copied


def compute_freshness_stats(stores, olap, plan=None):
    """How much the analytical copy lags the live transactional position.

    Counts everything committed so far, including rows newer than the
    frozen snapshot: the tail runs to the store's committed count, and
    both sealed and still-live update tracking feed the per-column
    numbers. Stats carry the current snapshot's epoch. Accepts one
    store or an iterable; with a plan given, n_fq is the fresh-byte
    count restricted to the plan's columns.
    """
    if hasattr(stores, "current_frozen"):
        stores = [stores]
    stats = FreshnessStats(epoch=None)
    for store in stores:
        handle = store.current_frozen
        if handle is None:
            raise OlapError("no frozen handle for table %r" % store.name)
        if stats.epoch is None:
            stats.epoch = handle.epoch
        elif stats.epoch != handle.epoch:
            raise EpochMismatchError("handles span epochs %d and %d"
                                     % (stats.epoch, handle.epoch))
        wm = olap.watermark.get(store.name, 0)
        updated = {}
        widths = {}
        dirty_union = set()
        for cs in store.schema:
            below = {r for r in store.sealed_dirty_rows(cs.name) if r < wm}
            below |= {r for r in store.live_dirty_rows(cs.name) if r < wm}
            updated[cs.name] = len(below)
            widths[cs.name] = cs.byte_width
            dirty_union |= below
        stats.add_table(store.name, wm, store.committed_rows,
                        updated, widths, len(dirty_union))
    if plan is not None:
        stats.n_fq = fresh_bytes_for_query(plan, stats)
    return stats


class RdeController:
    """Single control actor binding ledger, twin stores, and the
    analytical copy. Every migration re-freezes the database, so the
    state's epoch names the snapshot analytics will read."""

    def __init__(self, db, ledger, olap=None):
        self.db = db
        self.ledger = ledger
        self.olap = olap if olap is not None else OlapInstance()
        self.state = None
        self.handles = {}
        self.last_switch_stats = {}
        self.last_etl_bytes = 0
        self.total_etl_bytes = 0
        self.switch_count = 0

    def _switch_and_sync_all(self):
        out = self.db.switch_all()
        self.switch_count += 1
        self.handles = {}
        self.last_switch_stats = {}
        for name, (handle, stats) in out.items():
            self.handles[name] = handle
            self.last_switch_stats[name] = stats
            if stats.any_updates:
                sync_pass(self.db.table(name), handle.committed_count)

    def _enter(self, tag, assignment):
        self.ledger.apply(assignment)
        self._switch_and_sync_all()
        epoch = next(iter(self.handles.values())).epoch
        self.state = SystemState(
            tag=tag,
            epoch=epoch,
            oltp_cpus=frozenset(self.ledger.cpus(OLTP)),
            olap_cpus=frozenset(self.ledger.cpus(OLAP)),
        )
        return self.state

    def migrate_state_s1(self):
        asg = assignment_s1(self.ledger.topology, self.ledger.oltp_cpu_thres)
        return self._enter(S1, asg)

    def migrate_state_s2(self):
        asg = assignment_s2(self.ledger.topology, self.ledger.oltp_sock_thres)
        state = self._enter(S2, asg)
        copied = 0
        for store in self.db.tables.values():
            copied += etl_delta(store, self.olap)
        self.last_etl_bytes = copied
        self.total_etl_bytes += copied
        return state

    def migrate_state_s3(self, mode):
        if mode == ISOLATED:
            asg = assignment_s2(self.ledger.topology, self.ledger.oltp_sock_thres)
            return self._enter(S3_IS, asg)
        if mode == NON_ISOLATED:
            asg = assignment_s1(self.ledger.topology, self.ledger.oltp_cpu_thres)
            return self._enter(S3_NI, asg)
        raise LedgerError("unknown S3 mode %r" % mode)

    def freshness(self, plan=None):
        return compute_freshness_stats(self.db.tables.values(), self.olap, plan)
