"""Flat key=value run configuration.

One namespace covers data generation, topology, the decision rule, and
the cost calibration. Keys that carry a unit say so in their name
(mem_bw_bytes_per_sec, not mem_bw), so a config file reads unambiguously
without consulting the code. Values keep python literal syntax for
numbers; booleans accept true/false, yes/no, on/off, 1/0.
"""

from dataclasses import dataclass, fields

from .bench import BenchConfig
from .scheduler import COLOCATION, HYBRID, SchedulerConfig
from .simcost import CostParams
from .rde import make_topology

EXPERIMENTS = ("s1-sweep", "s2-batch", "s3-fresh-sweep",
               "s3-elastic-sweep", "adaptive-seq")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # data generation: line-item style cardinality scaled down by an
    # explicit divisor so live-engine runs stay interactive
    scale_factor: float = 1.0
    desk_divisor: int = 10_000
    seed: int = 42

    # topology and resource floors: dual-socket server shape
    sockets: int = 2
    cpus_per_socket: int = 14
    oltp_socket_threshold: int = 1
    elastic_grant_cpus: int = 4

    # decision rule
    alpha: float = 0.5
    elastic_enabled: bool = False
    elastic_mode: str = HYBRID          # hybrid | colocation

    # cost calibration: interconnect at half the local memory bandwidth;
    # remote cores stream at a 0.4 discount; transactional throughput
    # loses up to 37% fully remote and 55% with scans on its bus
    mem_bw_bytes_per_sec: float = 100e9
    interconnect_bw_bytes_per_sec: float = 50e9
    per_core_scan_bytes_per_sec: float = 1.15e9
    remote_core_efficiency: float = 0.4
    oltp_base_tps: float = 100_000.0
    oltp_remote_penalty: float = 0.37
    oltp_interference_penalty: float = 2.0 / 7.0
    join_probe_tuples_per_sec_per_core: float = 50e6
    groupby_seconds_per_group: float = 1e-6
    sync_seconds_per_million_tuples: float = 0.010
    column_width_bytes: int = 8

    # experiment driving
    experiment: str = "adaptive-seq"
    output_dir: str = "results"
    sim_steps: int = 300                # 100 passes over the 3-query mix
    sim_txns_per_step: int = 6000
    warmup_passes: int = 1
    engine_txns_per_step: int = 4
    engine_query_workers: int = 2

    def problems(self):
        """Validation findings as strings; empty means usable."""
        out = []
        if not self.scale_factor > 0:
            out.append("scale_factor must be positive")
        if self.desk_divisor < 1:
            out.append("desk_divisor must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            out.append("alpha must lie in [0, 1]")
        if self.elastic_mode not in (HYBRID, COLOCATION):
            out.append("elastic_mode must be hybrid or colocation")
        if self.sockets < 2:
            out.append("need at least two sockets, one per side")
        if self.cpus_per_socket < 1:
            out.append("cpus_per_socket must be at least 1")
        if not 1 <= self.oltp_socket_threshold < self.sockets:
            out.append("oltp_socket_threshold must leave a socket for analytics")
        if not 0 <= self.elastic_grant_cpus <= self.cpus_per_socket:
            out.append("elastic_grant_cpus must fit one socket")
        if self.experiment not in EXPERIMENTS:
            out.append("experiment must be one of %s" % ", ".join(EXPERIMENTS))
        if self.sim_steps < 1:
            out.append("sim_steps must be at least 1")
        if self.sim_txns_per_step < 0:
            out.append("sim_txns_per_step cannot be negative")
        if self.warmup_passes < 0:
            out.append("warmup_passes cannot be negative")
        if self.engine_txns_per_step < 0:
            out.append("engine_txns_per_step cannot be negative")
        try:
            self.cost_params()
        except ValueError as exc:
            out.append(str(exc))
        return out

    def check(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    # -- bridges into the engine and the simulator -------------------------

    def bench(self):
        return BenchConfig(scale_factor=self.scale_factor,
                           divisor=self.desk_divisor, seed=self.seed)

    def topology(self):
        return make_topology(self.sockets, self.cpus_per_socket)

    def cost_params(self):
        return CostParams(
            mem_bw=self.mem_bw_bytes_per_sec,
            ic_bw=self.interconnect_bw_bytes_per_sec,
            per_core_scan_rate=self.per_core_scan_bytes_per_sec,
            remote_core_efficiency=self.remote_core_efficiency,
            oltp_base_tps=self.oltp_base_tps,
            oltp_remote_penalty=self.oltp_remote_penalty,
            oltp_olap_interference_penalty=self.oltp_interference_penalty,
            join_random_access_rate=self.join_probe_tuples_per_sec_per_core,
            groupby_seconds_per_group=self.groupby_seconds_per_group,
            sync_seconds_per_million_tuples=self.sync_seconds_per_million_tuples,
            column_width_bytes=self.column_width_bytes,
        )

    def scheduler_config(self):
        return SchedulerConfig(alpha=self.alpha, f_el=self.elastic_enabled,
                               m_el=self.elastic_mode)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_TRUE_WORDS = ("true", "yes", "on", "1")
_FALSE_WORDS = ("false", "no", "off", "0")


def _coerce(key, raw):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigError("unknown config key %r" % key)
    raw = raw.strip()
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in _TRUE_WORDS:
            return True
        if low in _FALSE_WORDS:
            return False
        raise ConfigError("key %r expects a boolean, got %r" % (key, raw))
    if kind is int or kind == "int":
        try:
            return int(raw.replace("_", ""))
        except ValueError:
            raise ConfigError("key %r expects an integer, got %r" % (key, raw))
    if kind is float or kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError("key %r expects a number, got %r" % (key, raw))
    return raw


def parse_config(text):
    """Parse key=value lines into a dict; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("line %d is not key=value: %r" % (lineno, line))
        key, raw = body.split("=", 1)
        out[key.strip()] = _coerce(key.strip(), raw)
    return out


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional file plus key=value overrides."""
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config(fh.read()))
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r is not key=value" % item)
        key, raw = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return RunConfig(**values)


def default_config_text():
    """The default configuration as a commented, reloadable file."""
    lines = [
        "# htaplite run configuration (key = value, '#' comments)",
        "",
        "# data generation: order-entry schema; the line-item table holds",
        "# scale_factor * 6,001,215 / desk_divisor rows, 15 lines per order",
        "scale_factor = 1.0",
        "desk_divisor = 10000",
        "seed = 42",
        "",
        "# machine shape and resource floors",
        "sockets = 2",
        "cpus_per_socket = 14",
        "oltp_socket_threshold = 1       # whole sockets reserved for writes",
        "elastic_grant_cpus = 4          # cores the write side may lend",
        "",
        "# decision rule: consolidate when query-relevant fresh bytes reach",
        "# alpha times the total fresh bytes",
        "alpha = 0.5",
        "elastic_enabled = false",
        "elastic_mode = hybrid           # hybrid | colocation",
        "",
        "# cost calibration (dual-socket server; interconnect at half the",
        "# local memory bandwidth; remote cores stream at a 0.4 discount)",
        "mem_bw_bytes_per_sec = 100e9",
        "interconnect_bw_bytes_per_sec = 50e9",
        "per_core_scan_bytes_per_sec = 1.15e9",
        "remote_core_efficiency = 0.4",
        "oltp_base_tps = 100000",
        "oltp_remote_penalty = 0.37      # fully remote placement",
        "oltp_interference_penalty = 0.2857142857142857  # scans on the home bus",
        "join_probe_tuples_per_sec_per_core = 50e6",
        "groupby_seconds_per_group = 1e-6",
        "sync_seconds_per_million_tuples = 0.010",
        "column_width_bytes = 8",
        "",
        "# experiment driving",
        "experiment = adaptive-seq",
        "output_dir = results",
        "sim_steps = 300                 # 100 passes over the 3-query mix",
        "sim_txns_per_step = 6000",
        "warmup_passes = 1",
        "engine_txns_per_step = 4",
        "engine_query_workers = 2",
    ]
    return "\n".join(lines) + "\n"
