"""Experiment configuration, replication batches and CSV output."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .env import ChannelSet
from .policy import Policy, PolicyParams, QModelConfig, policy_from_name
from .sim import EpisodeMetrics, SimConfig, simulate_batch


class ConfigError(Exception):
    """Base class for configuration problems."""


class ConfigFileError(ConfigError):
    """The configuration file is missing or unreadable."""


class ConfigParseError(ConfigError):
    def __init__(self, path: str, line: int, message: str):
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: {message}")


class ConfigValidationError(ConfigError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


# key -> default (as text); every accepted key is listed here
DEFAULTS: dict[str, str] = {
    "num_channels": "10",
    "num_users": "100",
    "num_slots": "4000",
    "payload_bits": "100000",
    "bandwidth_hz": "1000000",
    "occupancy_free_prob": "",
    "theta_min": "0.1",
    "theta_max": "0.9",
    "theta_seed": "1",
    "reward_rate": "0.5",
    "penalty_rate": "0.5",
    "switch_cost": "1",
    "snr_db_min": "0",
    "snr_db_max": "9",
    "energy_per_bit": "1",
    "initial_throughput": "3",
    "seed": "0",
    "replications": "20",
    "policies": "classic,reward_only,reward_penalty,qmodel",
    "admission": "true",
    "initial_acceptance": "1",
    "q_favorable_levels": "0.001,0.01,0.05",
    "q_favorable_rates": "0.5,0.3,0.1",
    "q_threshold": "0.5",
    "q_unfavorable_levels": "0.75,1.0",
    "q_unfavorable_rates": "0.5,0.25",
    "output_dir": "results",
    "workers": "1",
    "timing": "false",
}


@dataclass(frozen=True)
class ExperimentSpec:
    base: SimConfig
    policies: tuple[Policy, ...]
    replications: int = 20
    output_dir: Path = Path("results")
    workers: int = 1
    record_runtime: bool = False

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if not self.policies:
            raise ValueError("at least one policy is required")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate policies: {names}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class ExperimentResult:
    policy_names: tuple[str, ...]
    num_slots: int
    finals: dict[tuple[str, int], EpisodeMetrics]
    curves: dict[str, np.ndarray]
    runtime_s: float
    replication_runtime_s: dict[tuple[str, int], float] = field(default_factory=dict)

    def total_bits(self, policy: str) -> np.ndarray:
        reps = sorted(r for p, r in self.finals if p == policy)
        return np.array([self.finals[policy, r].total_bits for r in reps], dtype=np.int64)


# --------------------------------------------------------------------------
# Config loading
# --------------------------------------------------------------------------


def read_config_file(path: str | Path) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; returns key -> (value, line number)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigFileError(f"config file not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError(f"cannot read config file {path}: {exc}") from None

    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(str(path), lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigParseError(str(path), lineno, "empty key")
        if key not in DEFAULTS:
            raise ConfigParseError(str(path), lineno, f"unknown key {key!r}")
        if key in entries:
            raise ConfigParseError(
                str(path), lineno, f"duplicate key {key!r} (first set on line {entries[key][1]})"
            )
        entries[key] = (value, lineno)
    return entries


def _convert(values: Mapping[str, str], key: str, conv: Callable[[str], object]):
    text = values[key]
    try:
        return conv(text)
    except (TypeError, ValueError) as exc:
        raise ConfigValidationError(key, f"cannot parse {text!r}: {exc}") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _uint64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("must be a 64-bit unsigned integer")
    return v


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigValidationError(key, message)


def spread_occupancy(num_channels: int, low: float, high: float, seed: int) -> tuple[float, ...]:
    """Free probabilities drawn once, uniformly in [low, high], from a fixed seed."""
    rng = np.random.default_rng(seed)
    return tuple(float(x) for x in rng.uniform(low, high, num_channels))


def build_spec(values: Mapping[str, str]) -> ExperimentSpec:
    get = lambda key, conv: _convert(values, key, conv)  # noqa: E731

    m = get("num_channels", int)
    _require(m >= 1, "num_channels", f"must be >= 1, got {m}")
    n = get("num_users", int)
    _require(n >= 1, "num_users", f"must be >= 1, got {n}")
    t = get("num_slots", int)
    _require(t >= 1, "num_slots", f"must be >= 1, got {t}")
    payload = get("payload_bits", int)
    _require(payload >= 1, "payload_bits", f"must be >= 1, got {payload}")
    bandwidth = get("bandwidth_hz", float)
    _require(bandwidth > 0, "bandwidth_hz", f"must be positive, got {bandwidth}")

    theta = get("occupancy_free_prob", _floats)
    if theta:
        _require(len(theta) == m, "occupancy_free_prob",
                 f"has {len(theta)} entries but num_channels is {m}")
        _require(all(0.0 <= x <= 1.0 for x in theta), "occupancy_free_prob",
                 f"entries must lie in [0, 1], got {theta}")
    else:
        lo, hi = get("theta_min", float), get("theta_max", float)
        _require(0.0 <= lo <= hi <= 1.0, "theta_min",
                 f"need 0 <= theta_min <= theta_max <= 1, got {lo}, {hi}")
        theta = spread_occupancy(m, lo, hi, get("theta_seed", _uint64))

    alpha = get("reward_rate", float)
    _require(0.0 < alpha < 1.0, "reward_rate", f"must lie in the open interval (0, 1), got {alpha}")
    beta = get("penalty_rate", float)
    _require(0.0 <= beta < 1.0, "penalty_rate", f"must lie in [0, 1), got {beta}")

    switch_cost = get("switch_cost", float)
    _require(switch_cost >= 0, "switch_cost", f"must be non-negative, got {switch_cost}")
    snr_lo, snr_hi = get("snr_db_min", float), get("snr_db_max", float)
    _require(snr_lo <= snr_hi, "snr_db_min", f"exceeds snr_db_max ({snr_lo} > {snr_hi})")
    energy = get("energy_per_bit", float)
    _require(energy > 0, "energy_per_bit", f"must be positive, got {energy}")
    initial_acceptance = get("initial_acceptance", float)
    _require(0.0 <= initial_acceptance <= 1.0, "initial_acceptance",
             f"must lie in [0, 1], got {initial_acceptance}")

    try:
        qmodel = QModelConfig(
            favorable_levels=get("q_favorable_levels", _floats),
            threshold=get("q_threshold", float),
            unfavorable_levels=get("q_unfavorable_levels", _floats),
            favorable_rates=get("q_favorable_rates", _floats),
            unfavorable_rates=get("q_unfavorable_rates", _floats),
        )
    except ValueError as exc:
        raise ConfigValidationError("q_*", str(exc)) from None

    names = [x.strip() for x in values["policies"].split(",") if x.strip()]
    _require(bool(names), "policies", "at least one policy is required")
    _require(len(set(names)) == len(names), "policies", f"duplicate policy names in {names}")
    num_actions = max(m, 2)
    params = PolicyParams(alpha, beta, num_actions)
    admission = get("admission", _bool)
    policies = []
    for name in names:
        try:
            policies.append(policy_from_name(name, params, qmodel, admission, initial_acceptance))
        except ValueError as exc:
            raise ConfigValidationError("policies", str(exc)) from None
    if m < 2:
        _require(all(p.name == "classic" for p in policies), "num_channels",
                 "learning policies need at least two channels")

    base = SimConfig(
        channels=ChannelSet(m, theta, payload, bandwidth),
        num_users=n,
        num_slots=t,
        policy=policies[0],
        switch_cost=switch_cost,
        snr_db_range=(snr_lo, snr_hi),
        energy_per_bit=energy,
        seed=get("seed", _uint64),
        legacy_initial_throughput=get("initial_throughput", float),
    )
    replications = get("replications", int)
    _require(replications >= 1, "replications", f"must be >= 1, got {replications}")
    workers = get("workers", int)
    _require(workers >= 1, "workers", f"must be >= 1, got {workers}")
    return ExperimentSpec(
        base=base,
        policies=tuple(policies),
        replications=replications,
        output_dir=Path(values["output_dir"]),
        workers=workers,
        record_runtime=get("timing", _bool),
    )


def load_spec(path: str | Path | None, overrides: Mapping[str, object] | None = None) -> ExperimentSpec:
    """Read a config file, apply overrides, and validate.

    Keys missing from the file take their defaults from ``DEFAULTS``;
    ``overrides`` win over both.  ``path=None`` uses the defaults alone.
    """
    values = dict(DEFAULTS)
    if path is not None:
        values.update({k: v for k, (v, _) in read_config_file(path).items()})
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigValidationError(key, "unknown key")
        values[key] = value if isinstance(value, str) else str(value)
    return build_spec(values)


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------


def replication_seed(master_seed: int, policy_index: int, replication: int) -> np.random.SeedSequence:
    """Stream for one (policy, replication) cell.

    SeedSequence hashes the three words into an independent PCG64 state, so
    streams of different cells do not overlap and appending a policy leaves
    the streams of existing policies untouched.
    """
    return np.random.SeedSequence([master_seed, policy_index, replication])


def _run_chunk(config: SimConfig, policy_index: int, reps: Sequence[int]):
    start = time.perf_counter()
    seeds = [replication_seed(config.seed, policy_index, r) for r in reps]
    metrics = simulate_batch(config, seeds)
    elapsed = time.perf_counter() - start
    return policy_index, list(reps), metrics, elapsed


def _chunks(n: int, k: int) -> list[range]:
    k = max(1, min(k, n))
    bounds = np.linspace(0, n, k + 1).round().astype(int)
    return [range(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    """Run every (policy, replication) episode and aggregate the results.

    Replications of a policy are split into ``workers`` contiguous chunks;
    each chunk runs as one batch.  Assembly is keyed by (policy,
    replication), so the numbers do not depend on the worker count.
    """
    workers = spec.workers if workers is None else workers
    started = time.perf_counter()
    jobs = []
    for pi, policy in enumerate(spec.policies):
        config = replace(spec.base, policy=policy)
        for reps in _chunks(spec.replications, workers):
            jobs.append((config, pi, reps))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_chunk, *zip(*jobs)))
    else:
        done = [_run_chunk(*job) for job in jobs]

    finals: dict[tuple[str, int], EpisodeMetrics] = {}
    rep_runtime: dict[tuple[str, int], float] = {}
    for pi, reps, metrics, elapsed in done:
        name = spec.policies[pi].name
        for r, m in zip(reps, metrics):
            finals[name, r] = m
            rep_runtime[name, r] = elapsed / len(reps)

    curves = {}
    for policy in spec.policies:
        cum = np.stack([finals[policy.name, r].cumulative_bits for r in range(spec.replications)])
        curves[policy.name] = cum.mean(axis=0)

    return ExperimentResult(
        policy_names=tuple(p.name for p in spec.policies),
        num_slots=spec.base.num_slots,
        finals=finals,
        curves=curves,
        runtime_s=time.perf_counter() - started if spec.record_runtime else math.nan,
        replication_runtime_s=rep_runtime if spec.record_runtime else {},
    )


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

CURVES_HEADER = "policy,slot,mean_cumulative_bits"
FINALS_HEADER = "policy,replication,total_bits,fairness,blocking_rate,collisions,switch_cost,runtime_s"


def fmt_real(x: float) -> str:
    return f"{float(x):.9g}"


def write_outputs(result: ExperimentResult, output_dir: str | Path) -> list[Path]:
    """Write curves.csv, finals.csv and summary.txt; returns the paths written."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    names = sorted(result.policy_names)
    curve_lines = [CURVES_HEADER]
    for name in names:
        for t, v in enumerate(result.curves[name], start=1):
            curve_lines.append(f"{name},{t},{fmt_real(v)}")

    final_lines = [FINALS_HEADER]
    for name, rep in sorted(result.finals):
        m = result.finals[name, rep]
        runtime = result.replication_runtime_s.get((name, rep), math.nan)
        final_lines.append(",".join([
            name, str(rep), str(m.total_bits), fmt_real(m.fairness), fmt_real(m.blocking_rate),
            str(m.collisions), fmt_real(m.switch_cost), fmt_real(runtime),
        ]))

    summary_lines = []
    for name in names:
        bits = result.total_bits(name).astype(float)
        std = float(np.std(bits, ddof=1)) if bits.size > 1 else math.nan
        summary_lines.append(
            f"{name}: total_bits mean={fmt_real(bits.mean())} std={fmt_real(std)} n={bits.size}"
        )
    if not math.isnan(result.runtime_s):
        summary_lines.append(f"runtime_s={fmt_real(result.runtime_s)}")

    paths = [out / "curves.csv", out / "finals.csv", out / "summary.txt"]
    for path, lines in zip(paths, (curve_lines, final_lines, summary_lines)):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return paths
