import math

import pytest

from htaplite.olap import QueryPlan
from htaplite.rde import RdeController, ResourceLedger, make_topology
from htaplite.scheduler import (
    COLOCATION,
    HYBRID,
    DecisionLog,
    SchedulerConfig,
    SchedulerError,
    SchedulerInput,
    decide,
    resource_schedule,
    run_query,
    schedule_batch,
)
from htaplite.storage import ColumnSchema, Database


# independently transcribed branch table; keys are
# (fresh_share_below_alpha, is_batch, f_el, m_el)
BRANCH_TABLE = {
    (True, False, False, HYBRID): "S3-IS",
    (True, False, False, COLOCATION): "S3-IS",
    (True, False, True, HYBRID): "S3-NI",
    (True, False, True, COLOCATION): "S1",
}


def expected_state(n_fq, n_ft, alpha, is_batch, f_el, m_el):
    cond = n_fq < alpha * n_ft
    return BRANCH_TABLE.get((cond, is_batch, f_el, m_el), "S2")


class TestDecide:
    def test_fresh_share_below_alpha_without_elasticity(self):
        out = decide(SchedulerInput(4, 10), SchedulerConfig(0.5, f_el=False))
        assert out == "S3-IS"

    def test_fresh_share_at_or_above_alpha(self):
        assert decide(SchedulerInput(6, 10), SchedulerConfig(0.5)) == "S2"

    def test_batch_always_consolidates(self):
        cfg = SchedulerConfig(0.5, f_el=True, m_el=HYBRID)
        assert decide(SchedulerInput(0, 10, is_batch=True), cfg) == "S2"
        assert decide(SchedulerInput(10, 10, is_batch=True), cfg) == "S2"

    def test_hybrid_elasticity_goes_non_isolated(self):
        cfg = SchedulerConfig(0.5, f_el=True, m_el=HYBRID)
        assert decide(SchedulerInput(4, 10), cfg) == "S3-NI"

    def test_colocation_elasticity_goes_s1(self):
        cfg = SchedulerConfig(0.5, f_el=True, m_el=COLOCATION)
        assert decide(SchedulerInput(4, 10), cfg) == "S1"

    def test_alpha_zero_always_consolidates(self):
        for n_fq in (0, 1, 500):
            assert decide(SchedulerInput(n_fq, 1000), SchedulerConfig(0.0)) == "S2"

    def test_fully_fresh_database_consolidates(self):
        assert decide(SchedulerInput(0, 0), SchedulerConfig(0.5)) == "S2"

    def test_tie_resolves_to_consolidation(self):
        assert decide(SchedulerInput(5, 10), SchedulerConfig(0.5)) == "S2"

    def test_truth_table_exhaustive(self):
        alphas = [i / 10 for i in range(11)]
        for alpha in alphas:
            for n_ft in (0, 10, 1000):
                for tenths in range(11):
                    n_fq = n_ft * tenths // 10
                    for is_batch in (False, True):
                        for f_el in (False, True):
                            for m_el in (HYBRID, COLOCATION):
                                cfg = SchedulerConfig(alpha, f_el=f_el, m_el=m_el)
                                inp = SchedulerInput(n_fq, n_ft, is_batch=is_batch)
                                assert decide(inp, cfg) == expected_state(
                                    n_fq, n_ft, alpha, is_batch, f_el, m_el), \
                                    (alpha, n_fq, n_ft, is_batch, f_el, m_el)

    def test_alpha_monotone_toward_consolidation(self):
        # shrinking alpha can only move decisions toward S2
        alphas = [i / 10 for i in range(11)]
        for tenths in range(11):
            n_fq = 100 * tenths
            tags = [decide(SchedulerInput(n_fq, 1000), SchedulerConfig(a))
                    for a in alphas]
            seen_non_s2 = False
            for tag in tags:     # ascending alpha: S2 prefix, then S3
                if tag != "S2":
                    seen_non_s2 = True
                else:
                    assert not seen_non_s2, (n_fq, tags)

    def test_scale_invariance(self):
        cfg = SchedulerConfig(0.5, f_el=True, m_el=HYBRID)
        cases = [(0, 10), (3, 10), (7, 10), (10, 10)]
        for n_fq, n_ft in cases:
            base = decide(SchedulerInput(n_fq, n_ft), cfg)
            for k in range(1, 41):
                scaled = decide(SchedulerInput(n_fq << k, n_ft << k), cfg)
                assert scaled == base, (n_fq, n_ft, k)
            for m in (3, 7, 1000003):   # safely away from the tie point
                if n_fq * 2 != n_ft:
                    assert decide(SchedulerInput(n_fq * m, n_ft * m), cfg) == base

    def test_input_validation(self):
        with pytest.raises(SchedulerError):
            SchedulerInput(-1, 10)
        with pytest.raises(SchedulerError):
            SchedulerInput(11, 10)
        with pytest.raises(SchedulerError):
            SchedulerConfig(alpha=1.5)
        with pytest.raises(SchedulerError):
            SchedulerConfig(m_el="turbo")


class TestConvergence:
    def test_linear_growth_trace_locks_into_consolidation(self):
        cfg = SchedulerConfig(0.5)
        tags = [decide(SchedulerInput(min(10 * i, 1000), 1000), cfg)
                for i in range(101)]
        assert tags[0] == "S3-IS"
        first_s2 = tags.index("S2")
        assert all(t == "S2" for t in tags[first_s2:])
        assert first_s2 == 50

    def test_saturating_trace_locks_into_consolidation(self):
        # share of query-relevant fresh bytes approaches 1 asymptotically
        cfg = SchedulerConfig(0.5)
        n_ft = 10 ** 6
        tags = []
        for i in range(120):
            share = 1.0 - math.exp(-i / 20.0)
            tags.append(decide(SchedulerInput(int(n_ft * share), n_ft), cfg))
        first_s2 = tags.index("S2")
        assert 0 < first_s2 < 119
        assert all(t == "S2" for t in tags[first_s2:])


def fixture_db():
    db = Database()
    hot = db.create_table("hot", [ColumnSchema("hk", "int64"),
                                  ColumnSchema("hv", "int64")])
    cold = db.create_table("cold", [ColumnSchema("ck", "int64"),
                                    ColumnSchema("cv", "int64")])
    for i in range(100):
        hot.insert_committed((i, i))
        cold.insert_committed((i, 5))
    return db, hot, cold


def plan_over(table, key, val):
    return QueryPlan(name="sum-%s" % table, shape="scan-filter-reduce",
                     scans=[(table, [key, val], None)],
                     aggregates=[(val, "sum")])


def make_controller(db, **ledger_kw):
    ledger_kw.setdefault("oltp_cpu_thres", (2, 0))
    ctl = RdeController(db, ResourceLedger(make_topology(2, 4), **ledger_kw))
    ctl.migrate_state_s2()    # bootstrap: isolated sockets, full extract
    return ctl


class TestAdmissionPath:
    def test_query_needing_all_fresh_data_consolidates(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        for i in range(100, 150):
            hot.insert_committed((i, i))
        log = DecisionLog()
        state, result, pre = run_query(plan_over("hot", "hk", "hv"),
                                       SchedulerConfig(0.5), ctl, log=log)
        assert state.tag == "S2"
        assert pre.n_fq == pre.n_ft > 0
        assert result.rows[0][0] == sum(range(150))
        assert ctl.freshness().n_ft == 0

    def test_query_over_stale_unrelated_table_isolates(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        for i in range(100, 130):
            hot.insert_committed((i, i))
        state, result, pre = run_query(plan_over("cold", "ck", "cv"),
                                       SchedulerConfig(0.5), ctl)
        assert state.tag == "S3-IS"
        assert pre.n_fq == 0 and pre.n_ft > 0
        assert result.rows[0][0] == 500
        # analytical copy untouched: the fresh bytes are still owed
        assert ctl.freshness().n_ft == pre.n_ft

    def test_elastic_modes_pick_their_states(self):
        for m_el, tag in ((HYBRID, "S3-NI"), (COLOCATION, "S1")):
            db, hot, cold = fixture_db()
            ctl = make_controller(db)
            for i in range(100, 130):
                hot.insert_committed((i, i))
            cfg = SchedulerConfig(0.5, f_el=True, m_el=m_el)
            state, result, _ = run_query(plan_over("cold", "ck", "cv"), cfg, ctl)
            assert state.tag == tag
            assert result.rows[0][0] == 500
            # elastic grant: analytical side reaches into socket 0
            assert any(cpu < 4 for cpu in state.olap_cpus)

    def test_batch_runs_one_etl_for_all_queries(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        for i in range(100, 200):
            hot.insert_committed((i, i))
        hot.update_committed(3, {"hv": 1_000_000}, commit_ts=1)
        plans = [plan_over("hot", "hk", "hv"), plan_over("cold", "ck", "cv")]
        log = DecisionLog()
        state, results = schedule_batch(plans, SchedulerConfig(0.5), ctl, log=log)
        assert state.tag == "S2"
        assert ctl.last_etl_bytes > 0
        assert results[0][1].rows[0][0] == sum(range(200)) - 3 + 1_000_000
        assert results[1][1].rows[0][0] == 500
        assert len(log.records) == 1 and log.records[0].is_batch

        state2, _ = schedule_batch(plans, SchedulerConfig(0.5), ctl)
        assert state2.tag == "S2"
        assert ctl.last_etl_bytes == 0       # nothing new to move

    def test_batch_of_one_equals_single_query_consolidation(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        for i in range(100, 120):
            hot.insert_committed((i, i))
        state, results = schedule_batch([plan_over("hot", "hk", "hv")],
                                        SchedulerConfig(0.5), ctl)
        assert state.tag == "S2"
        assert results[0][1].rows[0][0] == sum(range(120))
        assert ctl.freshness().n_ft == 0

    def test_empty_batch_rejected(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        with pytest.raises(SchedulerError):
            schedule_batch([], SchedulerConfig(0.5), ctl)

    def test_decision_log_captures_the_admission_trail(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        log = DecisionLog()
        cfg = SchedulerConfig(0.5)
        for i in range(100, 140):
            hot.insert_committed((i, i))
        run_query(plan_over("cold", "ck", "cv"), cfg, ctl, log=log)
        run_query(plan_over("hot", "hk", "hv"), cfg, ctl, log=log)
        assert [r.state for r in log.records] == ["S3-IS", "S2"]
        assert log.records[0].epoch < log.records[1].epoch
        assert log.records[1].n_fq == log.records[1].n_ft
        rows = log.rows()
        assert len(rows) == 2 and rows[0][0] == "sum-cold"

    def test_migration_actually_invoked(self):
        db, hot, cold = fixture_db()
        ctl = make_controller(db)
        before = ctl.switch_count
        state = resource_schedule(SchedulerInput(0, 0), SchedulerConfig(0.5), ctl)
        assert state.tag == "S2"
        assert ctl.switch_count == before + 1
