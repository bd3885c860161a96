import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htaplite.bench import TABLE_SCHEMAS, q1_plan, q6_plan, q19_plan
from htaplite.olap import AccessPath, AccessPathPlan, QueryPlan
from htaplite.rde import (
    S1,
    S2,
    S3_IS,
    S3_NI,
    ResourceLedger,
    SystemState,
    assignment_s1,
    make_topology,
)
from htaplite.scheduler import SchedulerConfig, SchedulerInput, decide
from htaplite.simcost import (
    ADAPTIVE,
    CostParams,
    SimDb,
    SimEvent,
    SimTrace,
    StepGrowth,
    estimate_etl_time,
    estimate_oltp_tps,
    estimate_query_time,
    estimate_sync_time,
    local_scan_rate,
    occupancy,
    remote_scan_rate,
    run_sequence,
)

TOPO = make_topology(2, 14)
OLTP_CPUS = frozenset(range(14))
OLAP_CPUS = frozenset(range(14, 28))


def one_col_plan(table="t", col="x"):
    return QueryPlan(name="probe", shape="scan-filter-reduce",
                     scans=[(table, (col,), None)],
                     aggregates=[(col, "sum")])


def path_plan(path, wm, cc, table="t", col="x"):
    return AccessPathPlan(per_column={(table, col): path},
                          table_rows={table: (wm, cc)},
                          execution_cpus=OLAP_CPUS, epoch=0)


def sys_state(tag):
    return SystemState(tag=tag, epoch=0, oltp_cpus=OLTP_CPUS,
                       olap_cpus=OLAP_CPUS)


@pytest.fixture
def ledger():
    return ResourceLedger(TOPO)


class TestCostParams:
    def test_defaults_keep_the_two_to_one_bandwidth_ratio(self):
        assert CostParams().bw_ratio == 2.0

    def test_interconnect_cannot_exceed_memory_bandwidth(self):
        with pytest.raises(ValueError):
            CostParams(mem_bw=1e9, ic_bw=2e9)

    @pytest.mark.parametrize("field,value", [
        ("mem_bw", 0.0),
        ("per_core_scan_rate", -1.0),
        ("oltp_remote_penalty", 1.0),
        ("oltp_olap_interference_penalty", -0.1),
        ("remote_core_efficiency", 0.0),
    ])
    def test_rejects_degenerate_values(self, field, value):
        with pytest.raises(ValueError):
            CostParams(**{field: value})

    def test_rates_cap_at_bus_and_core_limits(self):
        p = CostParams()
        assert local_scan_rate(14, p) == 14 * 1.15e9
        assert local_scan_rate(1000, p) == p.mem_bw
        assert remote_scan_rate(14, p) == 14 * 1.15e9 * 0.4
        assert remote_scan_rate(1000, p) == p.ic_bw


class TestQueryTime:
    # 1e9 bytes = 125M rows of one 8-byte column
    ROWS = 125_000_000

    def test_local_gigabyte_at_gigabyte_per_second(self, ledger):
        p = CostParams(mem_bw=1e9, ic_bw=0.5e9)
        t = estimate_query_time(one_col_plan(),
                                path_plan(AccessPath.LOCAL, self.ROWS, self.ROWS),
                                sys_state(S3_IS), ledger, p)
        assert t == 1.0

    def test_remote_pays_the_bandwidth_ratio(self, ledger):
        p = CostParams(mem_bw=1e9, ic_bw=0.5e9)
        t = estimate_query_time(one_col_plan(),
                                path_plan(AccessPath.REMOTE, 0, self.ROWS),
                                sys_state(S3_IS), ledger, p)
        assert t == 2.0

    def test_split_overlaps_to_the_slower_arm(self, ledger):
        p = CostParams(mem_bw=1e9, ic_bw=0.5e9)
        wm = round(self.ROWS * 0.8)
        t = estimate_query_time(one_col_plan(),
                                path_plan(AccessPath.SPLIT, wm, self.ROWS),
                                sys_state(S3_IS), ledger, p)
        assert t == 0.8     # max(0.8 local, 0.4 remote)

    def test_consolidated_state_serializes_the_arms(self, ledger):
        p = CostParams(mem_bw=1e9, ic_bw=0.5e9)
        wm = round(self.ROWS * 0.8)
        t = estimate_query_time(one_col_plan(),
                                path_plan(AccessPath.SPLIT, wm, self.ROWS),
                                sys_state(S2), ledger, p)
        assert t == pytest.approx(1.2)

    def test_zero_analytical_cpus_is_an_error(self, ledger):
        state = SystemState(tag=S3_IS, epoch=0, oltp_cpus=OLTP_CPUS,
                            olap_cpus=frozenset())
        with pytest.raises(ValueError):
            estimate_query_time(one_col_plan(),
                                path_plan(AccessPath.LOCAL, 10, 10),
                                state, ledger, CostParams())

    def test_join_shape_adds_the_probe_term(self, ledger):
        p = CostParams()
        plan = q19_plan(1.0, 900.0, 1, 5)
        rows = 6_001_215
        per_column = {("orderline", c): AccessPath.LOCAL
                      for c in ("ol_i_id", "ol_quantity", "ol_amount")}
        per_column[("item", "i_id")] = AccessPath.LOCAL
        per_column[("item", "i_price")] = AccessPath.LOCAL
        paths = AccessPathPlan(per_column=per_column,
                               table_rows={"orderline": (rows, rows),
                                           "item": (100_000, 100_000)},
                               execution_cpus=OLAP_CPUS, epoch=0)
        t = estimate_query_time(plan, paths, sys_state(S3_IS), ledger, p)
        scan = (rows * 3 + 100_000 * 2) * 8 / local_scan_rate(14, p)
        probe = rows / (14 * p.join_random_access_rate)
        assert t == pytest.approx(scan + probe)

    def test_groupby_adds_the_per_group_term(self, ledger):
        p = CostParams()
        plan = q1_plan()
        rows = 1_000_000
        per_column = {("orderline", c): AccessPath.LOCAL
                      for c in ("ol_number", "ol_quantity", "ol_amount",
                                "ol_delivery_d")}
        paths = AccessPathPlan(per_column=per_column,
                               table_rows={"orderline": (rows, rows)},
                               execution_cpus=OLAP_CPUS, epoch=0)
        base = estimate_query_time(plan, paths, sys_state(S3_IS), ledger, p,
                                   groups=0)
        t = estimate_query_time(plan, paths, sys_state(S3_IS), ledger, p,
                                groups=15)
        assert t == pytest.approx(base + 15 * p.groupby_seconds_per_group)

    @given(mem=st.floats(1e9, 200e9), cores=st.integers(1, 28),
           frac=st.floats(0.0, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_time_never_increases_with_more_bandwidth_or_cores(
            self, mem, cores, frac):
        rows = 1_000_000
        wm = round(rows * frac)
        paths = path_plan(AccessPath.SPLIT, wm, rows)
        lo = CostParams(mem_bw=mem, ic_bw=mem / 2)
        hi = CostParams(mem_bw=mem * 2, ic_bw=mem)
        small = SystemState(tag=S3_IS, epoch=0, oltp_cpus=OLTP_CPUS,
                            olap_cpus=frozenset(range(cores)))
        big = SystemState(tag=S3_IS, epoch=0, oltp_cpus=OLTP_CPUS,
                          olap_cpus=frozenset(range(cores + 1)))
        led = ResourceLedger(TOPO)
        t = estimate_query_time(one_col_plan(), paths, small, led, lo)
        assert estimate_query_time(one_col_plan(), paths, small, led, hi) <= t
        assert estimate_query_time(one_col_plan(), paths, big, led, lo) <= t


class TestEtlAndSync:
    def test_zero_bytes_is_free(self):
        assert estimate_etl_time(0, CostParams()) == 0.0

    def test_half_gigabyte_at_half_gigabyte_per_second(self):
        assert estimate_etl_time(5e8, CostParams(mem_bw=1e9, ic_bw=0.5e9)) == 1.0

    def test_negative_bytes_rejected(self):
        with pytest.raises(ValueError):
            estimate_etl_time(-1, CostParams())

    @given(a=st.floats(0, 1e12), b=st.floats(0, 1e12))
    @settings(max_examples=50, deadline=None)
    def test_linear_in_bytes(self, a, b):
        p = CostParams()
        whole = estimate_etl_time(a + b, p)
        parts = estimate_etl_time(a, p) + estimate_etl_time(b, p)
        assert whole == pytest.approx(parts, rel=1e-12, abs=1e-15)

    def test_sync_charge_per_million_tuples(self):
        p = CostParams()
        assert estimate_sync_time(1_000_000, p) == pytest.approx(0.010)
        assert estimate_sync_time(0, p) == 0.0

    def test_batch_copy_time_sits_by_the_query_time(self):
        # 500MB copied per batch, 160MB scanned per query: the two
        # charges land within a factor of ~2.5 of each other
        p = CostParams()
        t_etl = estimate_etl_time(500e6, p)
        t_q = 160e6 / local_scan_rate(14, p)
        assert 0.4 < t_etl / t_q < 2.5


def trade_state(topo, i):
    """S1 trade: analytics takes i home cores, cedes i remote ones."""
    led = ResourceLedger(topo, oltp_cpu_thres=(0, 0))
    led.apply(assignment_s1(topo, (14 - i, i)))
    state = SystemState(tag=S1, epoch=0,
                        oltp_cpus=frozenset(led.cpus("oltp")),
                        olap_cpus=frozenset(led.cpus("olap")))
    return state, led


class TestOltpTps:
    def test_isolated_without_analytics_runs_at_base(self):
        p = CostParams()
        state, led = trade_state(TOPO, 0)
        state = SystemState(tag=S2, epoch=0, oltp_cpus=state.oltp_cpus,
                            olap_cpus=state.olap_cpus)
        assert estimate_oltp_tps(state, led, False, p) == p.oltp_base_tps

    def test_full_trade_without_analytics_drops_37_percent(self):
        p = CostParams()
        state, led = trade_state(TOPO, 14)
        tps = estimate_oltp_tps(state, led, False, p)
        assert tps == pytest.approx(0.63 * p.oltp_base_tps, rel=1e-12)

    def test_full_trade_with_analytics_drops_to_45_percent(self):
        p = CostParams()
        state, led = trade_state(TOPO, 14)
        tps = estimate_oltp_tps(state, led, True, p)
        assert tps == pytest.approx(0.45 * p.oltp_base_tps, rel=1e-12)

    def test_interpolation_is_monotone_in_the_trade(self):
        p = CostParams()
        quiet, busy = [], []
        for i in range(15):
            state, led = trade_state(TOPO, i)
            quiet.append(estimate_oltp_tps(state, led, False, p))
            busy.append(estimate_oltp_tps(state, led, True, p))
        assert quiet == sorted(quiet, reverse=True)
        assert busy == sorted(busy, reverse=True)
        assert all(b <= q for q, b in zip(quiet, busy))

    def test_isolated_consolidated_scans_do_not_interfere(self):
        p = CostParams()
        state, led = trade_state(TOPO, 0)
        state = SystemState(tag=S2, epoch=0, oltp_cpus=state.oltp_cpus,
                            olap_cpus=state.olap_cpus)
        assert estimate_oltp_tps(state, led, True, p) == p.oltp_base_tps

    def test_isolated_stale_reads_pull_on_the_home_bus(self):
        p = CostParams()
        state, led = trade_state(TOPO, 0)
        state = SystemState(tag=S3_IS, epoch=0, oltp_cpus=state.oltp_cpus,
                            olap_cpus=state.olap_cpus)
        tps = estimate_oltp_tps(state, led, True, p)
        expected = p.oltp_base_tps * (1 - (2.0 / 7.0) * 0.5)
        assert tps == pytest.approx(expected, rel=1e-12)


class TestOccupancy:
    def test_edges(self):
        assert occupancy(0, 100) == 0.0
        assert occupancy(100, 0) == 0.0
        assert occupancy(100, 1) == pytest.approx(1.0)

    def test_bounded_by_table_size_and_saturating(self):
        assert occupancy(1000, 10**9) == pytest.approx(1000.0)
        assert occupancy(1000, 500) < occupancy(1000, 5000) < 1000.0

    @given(n=st.integers(1, 100_000), u=st.integers(0, 5000))
    @settings(max_examples=40, deadline=None)
    def test_matches_the_expectation_recurrence(self, n, u):
        # E_{k+1} = E_k + (n - E_k)/n, E_0 = 0
        e = 0.0
        for _ in range(min(u, 600)):
            e += (n - e) / n
        assert occupancy(n, min(u, 600)) == pytest.approx(e, rel=1e-9, abs=1e-9)


class TestSimDb:
    def make(self):
        db = SimDb()
        db.add_table("t", 1000, ("a", "b"))
        return db

    def test_loaded_tables_start_synchronized(self):
        db = self.make()
        s = db.stats()
        assert s.n_ft == 0
        assert s.freshness_rate == 1.0

    def test_insert_tail_charges_every_column(self):
        db = self.make()
        db.insert("t", 50)
        assert db.stats().n_ft == 50 * 8 * 2

    def test_updates_below_watermark_count_per_column(self):
        db = self.make()
        db.update("t", "a", 300)
        s = db.stats()
        assert s.updated_rows("t", "a") == pytest.approx(occupancy(1000, 300))
        assert s.updated_rows("t", "b") == 0

    def test_updates_scale_by_the_below_watermark_share(self):
        db = self.make()
        db.insert("t", 1000)          # half the rows are now tail
        db.update("t", "a", 400)
        assert db.stats().updated_rows("t", "a") == pytest.approx(
            occupancy(1000, 200))

    def test_etl_returns_fresh_bytes_and_resets(self):
        db = self.make()
        db.insert("t", 100)
        db.update("t", "a", 50)
        expect = db.stats().n_ft
        assert db.etl() == expect
        assert db.stats().n_ft == 0
        assert db.tables["t"].wm == 1100

    def test_switch_returns_sync_tuples_and_advances_epoch(self):
        db = self.make()
        db.update("t", "a", 120)
        before = db.epoch
        tuples = db.switch()
        assert db.epoch == before + 1
        assert tuples == pytest.approx(occupancy(1000, 120))
        assert db.switch() == 0.0        # counters cleared

    def test_plan_restriction_matches_manual_sum(self):
        db = self.make()
        db.insert("t", 10)
        plan = one_col_plan("t", "a")
        s = db.stats(plan)
        assert s.n_fq == 10 * 8
        assert s.n_ft == 10 * 8 * 2


def growth(tx):
    return StepGrowth(inserts={"orderline": 10 * tx, "orders": tx},
                      updates={("stock", "s_quantity"): 10 * tx})


def full_scale_db():
    db = SimDb()
    db.add_table("orderline", 6_001_215,
                 [c.name for c in TABLE_SCHEMAS["orderline"]])
    db.add_table("orders", 400_081, [c.name for c in TABLE_SCHEMAS["orders"]])
    db.add_table("stock", 100_000, [c.name for c in TABLE_SCHEMAS["stock"]])
    db.add_table("item", 100_000, [c.name for c in TABLE_SCHEMAS["item"]])
    return db


def mix_workload(steps, tx):
    builders = (q1_plan, lambda: q6_plan(0, 10**9, 50),
                lambda: q19_plan(1.0, 900.0, 1, 5))
    return [(builders[i % 3](), growth(tx)) for i in range(steps)]


class TestRunSequence:
    def test_rejects_empty_workload_and_unknown_policy(self):
        with pytest.raises(ValueError):
            run_sequence([], ADAPTIVE, SchedulerConfig(), CostParams())
        with pytest.raises(ValueError):
            run_sequence(mix_workload(3, 0), "S9", SchedulerConfig(),
                         CostParams())

    def test_zero_growth_costs_the_same_in_every_state(self):
        cfg = SchedulerConfig()
        p = CostParams()
        wl = mix_workload(9, 0)
        totals = {}
        for policy in (ADAPTIVE, S1, S2, S3_IS):
            totals[policy] = run_sequence(
                wl, policy, cfg, p, simdb=full_scale_db()).cumulative_olap_seconds
        assert len({round(v, 12) for v in totals.values()}) == 1
        # the elastic grant adds cores, so it can only be cheaper
        ni = run_sequence(wl, S3_NI, cfg, p,
                          simdb=full_scale_db()).cumulative_olap_seconds
        assert ni <= totals[S2]

    def test_zero_growth_adaptive_consolidates_on_the_tie(self):
        trace = run_sequence(mix_workload(3, 0), ADAPTIVE, SchedulerConfig(),
                             CostParams(), simdb=full_scale_db())
        assert [e.state for e in trace.events] == [S2, S2, S2]

    def test_static_split_and_consolidation_curves_cross(self):
        # stale-isolated is cheaper per step early, dearer late
        p = CostParams()
        cfg = SchedulerConfig()
        wl = [(q6_plan(0, 10**9, 50), growth(6000)) for _ in range(200)]
        s2 = run_sequence(wl, S2, cfg, p, simdb=full_scale_db())
        s3 = run_sequence(wl, S3_IS, cfg, p, simdb=full_scale_db())
        step_cost = lambda e: e.etl_seconds + e.exec_seconds
        diff = [step_cost(a) - step_cost(b)
                for a, b in zip(s3.events, s2.events)]
        assert diff[0] < 0
        assert diff[-1] > 0
        crossings = sum(1 for a, b in zip(diff, diff[1:])
                        if (a < 0) != (b < 0))
        assert crossings == 1

    def test_adaptive_trace_replays_through_the_decision_rule(self):
        cfg = SchedulerConfig(alpha=0.5)
        trace = run_sequence(mix_workload(60, 6000), ADAPTIVE, cfg,
                             CostParams(), simdb=full_scale_db())
        for e in trace.events:
            expect = decide(SchedulerInput(n_fq=e.n_fq, n_ft=e.n_ft), cfg)
            assert e.state == expect
        assert any(e.state == S2 for e in trace.events)
        assert any(e.state == S3_IS for e in trace.events)

    def test_trace_rows_carry_a_running_total(self):
        trace = run_sequence(mix_workload(12, 6000), ADAPTIVE,
                             SchedulerConfig(), CostParams(),
                             simdb=full_scale_db())
        rows = trace.rows()
        assert len(rows) == 12
        cums = [r[7] for r in rows]
        assert cums == sorted(cums)
        assert cums[-1] == pytest.approx(trace.cumulative_olap_seconds)

    def test_trace_rejects_negative_times_and_time_travel(self):
        trace = SimTrace()
        with pytest.raises(ValueError):
            trace.append(SimEvent(0, "q", S2, 0, 0, -1.0, 0.0, 1.0))
        trace.append(SimEvent(3, "q", S2, 0, 0, 0.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            trace.append(SimEvent(2, "q", S2, 0, 0, 0.0, 1.0, 1.0))

    def test_adaptive_dominates_static_policies_under_material_growth(self):
        # dominance needs the full 100-iteration mix: the rule front-loads
        # delta copies that only pay back once tails get expensive
        cfg = SchedulerConfig()
        p = CostParams()
        rng = random.Random(4242)
        rates = [5000, 6000, 12000] + [rng.randrange(5000, 40001)
                                       for _ in range(2)]
        for tx in rates:
            wl = mix_workload(300, tx)
            adaptive = run_sequence(wl, ADAPTIVE, cfg, p,
                                    simdb=full_scale_db())
            slack = max((e.etl_seconds for e in adaptive.events), default=0.0)
            for policy in (S1, S2, S3_IS, S3_NI):
                static = run_sequence(wl, policy, cfg, p,
                                      simdb=full_scale_db())
                assert (adaptive.cumulative_olap_seconds
                        <= static.cumulative_olap_seconds + slack + 1e-9), (
                    "policy %s at %d tx/step" % (policy, tx))

    def test_default_calibration_beats_static_stale_isolated_clearly(self):
        cfg = SchedulerConfig()
        p = CostParams()
        wl = mix_workload(300, 6000)
        adaptive = run_sequence(wl, ADAPTIVE, cfg, p, simdb=full_scale_db())
        stale = run_sequence(wl, S3_IS, cfg, p, simdb=full_scale_db())
        gap = 1 - adaptive.cumulative_olap_seconds / stale.cumulative_olap_seconds
        assert gap >= 0.20
