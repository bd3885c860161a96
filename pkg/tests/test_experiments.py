import pytest

from htaplite.config import ConfigError, RunConfig
from htaplite.experiments import (
    BATCH_SIZES,
    crossover_bracket,
    datagen,
    dump_tables,
    mix_workload,
    run_experiment,
    s2_batch_rows,
    s3_fresh_rows,
    sim_database,
    step_growth,
    write_csv,
)


def default_params():
    return RunConfig().cost_params()


class TestCsvFormat:
    def test_header_carries_schema_version_and_name(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "trial", ("a", "b"),
                         [(1, 2.5), (3, 1 / 3)])
        lines = path.read_text().splitlines()
        assert lines[0] == "# htaplite-csv v1 trial"
        assert lines[1] == "a,b"
        assert lines[2] == "1,2.5"

    def test_floats_render_to_stable_text(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "trial", ("x",), [(1 / 3,)])
        assert path.read_text().splitlines()[-1] == "0.333333333333"


class TestModeledBatches:
    def test_totals_fall_as_batches_grow(self):
        rows = s2_batch_rows(default_params(), cores=14)
        totals = [r[4] for r in rows]
        assert [r[0] for r in rows] == list(BATCH_SIZES)
        assert all(b < a for a, b in zip(totals, totals[1:]))

    def test_copies_halve_with_batch_size(self):
        for batch, copies, *_ in s2_batch_rows(default_params(), cores=14):
            assert copies == 16 // batch

    def test_copy_share_collapses_by_an_order_of_magnitude(self):
        rows = s2_batch_rows(default_params(), cores=14)
        shares = {r[0]: r[5] for r in rows}
        assert shares[1] > 5 * shares[16]


class TestCrossover:
    def test_bracket_on_default_calibration(self):
        rows = s3_fresh_rows(default_params(), cores=14)
        assert crossover_bracket(rows) == (0.44, 0.46)

    def test_no_crossing_gives_none(self):
        rows = [(i / 10, 1.0, 2.0, "split") for i in range(11)]
        assert crossover_bracket(rows) is None


class TestWorkload:
    def test_mix_rotates_the_three_shapes(self):
        names = [plan.name for plan, _ in mix_workload(7, 1000)]
        assert names == ["q1", "q6", "q19", "q1", "q6", "q19", "q1"]

    def test_growth_counts_per_transaction(self):
        g = step_growth(500)
        assert g.inserts["orderline"] == 5000
        assert g.inserts["orders"] == 500
        assert g.updates[("stock", "s_quantity")] == 5000

    def test_full_scale_cardinalities(self):
        db = sim_database(1.0)
        assert db.tables["orderline"].rows == 6_001_215
        assert db.tables["orders"].rows == 400_081
        assert db.tables["stock"].rows == 100_000


class TestDatagen:
    def test_engine_loads_synchronized(self):
        rig = datagen(RunConfig())
        assert rig.ctl.freshness().freshness_rate == 1.0
        bench = RunConfig().bench()
        ol = rig.db.table("orderline")
        assert ol.committed_rows == bench.initial_orderline_rows

    def test_dump_writes_one_file_per_table(self, tmp_path):
        rig = datagen(RunConfig())
        files = dump_tables(rig.db, tmp_path)
        assert sorted(p.name for p in files) == [
            "data_item.csv", "data_orderline.csv", "data_orders.csv",
            "data_stock.csv", "data_warehouse.csv"]
        lines = (tmp_path / "data_orderline.csv").read_text().splitlines()
        # header comment + column row + one line per committed row
        assert len(lines) == 2 + rig.db.table("orderline").committed_rows


class TestRunExperiment:
    def test_unknown_name_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run_experiment("warp-drive", RunConfig(), out_dir=tmp_path)

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_experiment("s1-sweep", RunConfig(), out_dir=out)
        assert (a / "s1_sweep.csv").read_bytes() == \
            (b / "s1_sweep.csv").read_bytes()
