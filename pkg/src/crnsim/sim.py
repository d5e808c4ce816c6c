"""Slot-by-slot simulation of secondary users sharing licensed channels.

Per slot, each user consumes a fixed block of uniforms regardless of the
policy in use: ``M`` occupancy draws, then ``N`` selection, ``N`` gate and
``N`` SNR draws.  Keeping the consumption identical across policies means
two policies that make the same decisions see the same random stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .env import ChannelSet, ChannelRealization, SlotOutcome, classify_outcomes
from .policy import (
    AdmissionState,
    Policy,
    PolicyKind,
    admission_rows,
    penalty_rows,
    q_classify_batch,
    q_rates,
    reward_rows,
    sample_rows,
)

SeedLike = int | np.random.SeedSequence


def link_ber(snr_db):
    """BPSK bit error rate over AWGN, ``Q(sqrt(2 * snr))`` with snr in linear units."""
    snr = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    # Q(sqrt(2 s)) = erfc(sqrt(s)) / 2
    ber = 0.5 * erfc(np.sqrt(snr))
    return float(ber) if np.ndim(ber) == 0 else ber


@dataclass(frozen=True)
class SimConfig:
    channels: ChannelSet
    num_users: int
    num_slots: int
    policy: Policy
    switch_cost: float = 1.0
    snr_db_range: tuple[float, float] = (0.0, 9.0)
    energy_per_bit: float = 1.0
    seed: int = 0
    # Carried for completeness of the parameter table; nothing reads it.
    legacy_initial_throughput: float = 3.0

    def __post_init__(self) -> None:
        if self.num_users < 1:
            raise ValueError(f"num_users must be >= 1, got {self.num_users}")
        if self.num_slots < 1:
            raise ValueError(f"num_slots must be >= 1, got {self.num_slots}")
        lo, hi = self.snr_db_range
        if not lo <= hi:
            raise ValueError(f"snr_db_range lower bound exceeds upper: {self.snr_db_range}")
        if self.switch_cost < 0:
            raise ValueError(f"switch_cost must be non-negative, got {self.switch_cost}")
        if not self.energy_per_bit > 0:
            raise ValueError(f"energy_per_bit must be positive, got {self.energy_per_bit}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.policy.kind is not PolicyKind.CLASSIC_UNIFORM and self.channels.num_channels < 2:
            raise ValueError("learning policies need at least two channels")


@dataclass
class AgentState:
    user_id: int
    prob_vector: np.ndarray
    admission: AdmissionState
    last_channel: int | None
    bits_delivered: int
    collisions: int
    blocked: int
    switches: int


class Population:
    """Struct-of-arrays state for the users of one or more independent episodes.

    Rows are grouped by episode: users ``k*N .. (k+1)*N - 1`` belong to
    episode ``k`` and only ever contend with each other.
    """

    def __init__(self, num_users: int, num_channels: int,
                 rngs: np.random.Generator | Sequence[np.random.Generator],
                 initial_acceptance: float = 1.0):
        if isinstance(rngs, np.random.Generator):
            rngs = [rngs]
        self.num_users = num_users
        self.num_episodes = len(rngs)
        rows = num_users * self.num_episodes
        self.probs = np.full((rows, num_channels), 1.0 / num_channels)
        self.acceptance = np.full(rows, float(initial_acceptance))
        # one admission step per user, drawn when it joins
        self.step = np.concatenate(
            [rng.uniform(np.finfo(float).tiny, 1.0, num_users) for rng in rngs]
        )
        self.last_channel = np.full(rows, -1, dtype=np.int64)
        self.bits = np.zeros(rows, dtype=np.int64)
        self.collisions = np.zeros(rows, dtype=np.int64)
        self.busy = np.zeros(rows, dtype=np.int64)
        self.blocked = np.zeros(rows, dtype=np.int64)
        self.switches = np.zeros(rows, dtype=np.int64)
        self._episode_offset = np.repeat(np.arange(self.num_episodes) * num_channels, num_users)

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def agent(self, user: int) -> AgentState:
        last = int(self.last_channel[user])
        return AgentState(
            user_id=user,
            prob_vector=self.probs[user].copy(),
            admission=AdmissionState(float(self.acceptance[user]), float(self.step[user])),
            last_channel=None if last < 0 else last,
            bits_delivered=int(self.bits[user]),
            collisions=int(self.collisions[user]),
            blocked=int(self.blocked[user]),
            switches=int(self.switches[user]),
        )

    def agents(self) -> list[AgentState]:
        return [self.agent(n) for n in range(self.size)]


@dataclass(frozen=True)
class SlotMetrics:
    bits: int
    successes: int
    collisions: int
    busy: int
    blocked: int


@dataclass(frozen=True)
class _StepResult:
    free: np.ndarray
    transmit: np.ndarray
    chosen: np.ndarray
    success: np.ndarray
    collided: np.ndarray
    busy: np.ndarray


def uniforms_per_slot(num_channels: int, num_users: int) -> int:
    return num_channels + 3 * num_users


def _step(pop: Population, theta: np.ndarray, policy: Policy, payload_bits: int,
          snr_lo: float, snr_hi: float, snr_offset_db: float, u: np.ndarray) -> _StepResult:
    """One slot for every episode in ``pop``; ``u`` has one row of uniforms per episode."""
    m, n = theta.shape[0], pop.num_users
    free = (u[:, :m] < theta).ravel()
    sel_u = 1.0 - u[:, m:m + n].ravel()
    gate_u = u[:, m + n:m + 2 * n].ravel()
    snr_u = u[:, m + 2 * n:m + 3 * n].ravel()

    # 1. admission gate
    if policy.gated:
        transmit = gate_u < pop.acceptance
    else:
        transmit = np.ones(pop.size, dtype=bool)

    # 2. channel selection
    chosen = sample_rows(pop.probs, sel_u)

    # 3. outcome resolution, channels keyed per episode
    key = pop._episode_offset + chosen
    counts = np.bincount(key[transmit], minlength=free.size)
    on_free = transmit & free[key]
    single = counts[key] == 1
    success = on_free & single
    collided = on_free & ~single
    busy = transmit & ~free[key]
    failed = collided | busy

    # 4. learning
    kind = policy.kind
    if kind is PolicyKind.REWARD_ONLY or kind is PolicyKind.REWARD_PENALTY:
        rows = np.flatnonzero(success)
        reward_rows(pop.probs, rows, chosen[rows], np.full(rows.size, policy.params.reward_rate))
        if kind is PolicyKind.REWARD_PENALTY:
            rows = np.flatnonzero(failed)
            penalty_rows(pop.probs, rows, chosen[rows],
                         np.full(rows.size, policy.params.penalty_rate), m)
    elif kind is PolicyKind.QMODEL:
        rows = np.flatnonzero(transmit)
        response = np.ones(rows.size)
        ok = success[rows]
        snr_db = snr_lo + (snr_hi - snr_lo) * snr_u[rows[ok]] + snr_offset_db
        response[ok] = link_ber(snr_db)
        favorable, level = q_classify_batch(response, policy.qmodel)
        rates = q_rates(favorable, level, policy.qmodel)
        good, bad = rows[favorable], rows[~favorable]
        reward_rows(pop.probs, good, chosen[good], rates[favorable])
        penalty_rows(pop.probs, bad, chosen[bad], rates[~favorable], m)

    # 5. admission control
    if policy.gated:
        pop.acceptance = admission_rows(pop.acceptance, pop.step, collided)

    # 6. bookkeeping
    switched = transmit & (pop.last_channel >= 0) & (chosen != pop.last_channel)
    pop.last_channel = np.where(transmit, chosen, pop.last_channel)
    pop.switches += switched
    pop.bits += success * payload_bits
    pop.collisions += collided
    pop.busy += busy
    pop.blocked += ~transmit
    return _StepResult(free, transmit, chosen, success, collided, busy)


def _snr_offset(energy_per_bit: float) -> float:
    # Eb/N0 = SNR * Eb in dB terms; a 1 J bit energy leaves the SNR unchanged.
    return 10.0 * math.log10(energy_per_bit)


def run_slot(pop: Population, channels: ChannelSet, policy: Policy, slot: int,
             rng: np.random.Generator, snr_db_range: tuple[float, float] = (0.0, 9.0),
             energy_per_bit: float = 1.0) -> tuple[Population, SlotOutcome, SlotMetrics]:
    """Advance every user of a single-episode population by one slot.

    Order within the slot: admission gate, channel sampling, outcome
    resolution, learning update, admission update, switch accounting.
    ``pop`` is updated in place and returned.
    """
    if pop.num_episodes != 1:
        raise ValueError("run_slot drives a single episode; use simulate_batch for several")
    u = rng.random((1, uniforms_per_slot(channels.num_channels, pop.size)))
    res = _step(pop, channels.theta, policy, channels.payload_bits,
                snr_db_range[0], snr_db_range[1], _snr_offset(energy_per_bit), u)
    realization = ChannelRealization(slot, tuple(bool(f) for f in res.free))
    users = np.flatnonzero(res.transmit)
    outcome = classify_outcomes(realization, {int(k): int(res.chosen[k]) for k in users})
    n_success = int(res.success.sum())
    metrics = SlotMetrics(
        bits=n_success * channels.payload_bits,
        successes=n_success,
        collisions=int(res.collided.sum()),
        busy=int(res.busy.sum()),
        blocked=int((~res.transmit).sum()),
    )
    return pop, outcome, metrics


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def per_user_throughput(agent: AgentState) -> int:
    return agent.bits_delivered


def total_throughput(agents: Sequence[AgentState]) -> int:
    return sum(a.bits_delivered for a in agents)


def count_switches(path: Sequence[int]) -> int:
    return sum(1 for a, b in zip(path, path[1:]) if a != b)


def switching_cost(agent: AgentState, cost: float) -> float:
    return cost * agent.switches


def fairness_index(per_user_bits: Sequence[float]) -> float:
    """Jain's index ``(sum x)^2 / (N * sum x^2)``; an all-zero allocation counts as fair."""
    x = np.asarray(per_user_bits, dtype=float)
    if x.size == 0:
        raise ValueError("fairness of an empty population is undefined")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        return 1.0
    value = float(x.sum()) ** 2 / (x.size * sq)
    # rounding can nudge the ratio a hair past its bounds
    return min(max(value, 1.0 / x.size), 1.0)


def blocking_rate(agents: Sequence[AgentState], num_slots: int) -> float:
    if not agents:
        return 0.0
    return sum(a.blocked for a in agents) / (len(agents) * num_slots)


@dataclass(frozen=True)
class EpisodeMetrics:
    """Final counters of one replication plus its per-slot series."""

    payload_bits: int
    num_slots: int
    switch_cost_per_switch: float
    per_user_bits: np.ndarray
    per_user_collisions: np.ndarray
    per_user_blocked: np.ndarray
    per_user_switches: np.ndarray
    slot_bits: np.ndarray
    slot_collisions: np.ndarray
    slot_blocked: np.ndarray
    successes: int
    final_probs: np.ndarray
    final_acceptance: np.ndarray

    @property
    def num_users(self) -> int:
        return int(self.per_user_bits.shape[0])

    @property
    def total_bits(self) -> int:
        return int(self.per_user_bits.sum())

    @property
    def collisions(self) -> int:
        return int(self.per_user_collisions.sum())

    @property
    def blocked(self) -> int:
        return int(self.per_user_blocked.sum())

    @property
    def fairness(self) -> float:
        return fairness_index(self.per_user_bits)

    @property
    def blocking_rate(self) -> float:
        return self.blocked / (self.num_users * self.num_slots)

    @property
    def switch_cost(self) -> float:
        return self.switch_cost_per_switch * float(self.per_user_switches.sum())

    @property
    def per_user_switch_cost(self) -> np.ndarray:
        return self.switch_cost_per_switch * self.per_user_switches

    @property
    def cumulative_bits(self) -> np.ndarray:
        return np.cumsum(self.slot_bits)


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


_CHUNK_UNIFORMS = 1 << 15


def simulate_batch(config: SimConfig, seeds: Sequence[SeedLike]) -> list[EpisodeMetrics]:
    """Run one independent episode per seed, advanced together slot by slot.

    Each episode owns its generator and its users never interact with
    another episode's, so the metrics of an episode do not depend on which
    other seeds share the batch.
    """
    rngs = [make_rng(s) for s in seeds]
    k_eps = len(rngs)
    if k_eps == 0:
        return []
    channels = config.channels
    m, n, t_total = channels.num_channels, config.num_users, config.num_slots
    pop = Population(n, m, rngs, config.policy.initial_acceptance)
    theta = channels.theta
    lo, hi = config.snr_db_range
    offset = _snr_offset(config.energy_per_bit)

    per_slot = uniforms_per_slot(m, n)
    chunk = max(1, _CHUNK_UNIFORMS // per_slot)
    slot_bits = np.zeros((k_eps, t_total), dtype=np.int64)
    slot_collisions = np.zeros((k_eps, t_total), dtype=np.int64)
    slot_blocked = np.zeros((k_eps, t_total), dtype=np.int64)
    successes = np.zeros(k_eps, dtype=np.int64)

    t = 0
    while t < t_total:
        c = min(chunk, t_total - t)
        # row-major fill: identical to c successive rng.random(per_slot) calls
        block = np.stack([rng.random((c, per_slot)) for rng in rngs], axis=1)
        for row in block:
            res = _step(pop, theta, config.policy, channels.payload_bits, lo, hi, offset, row)
            s = res.success.reshape(k_eps, n).sum(axis=1)
            successes += s
            slot_bits[:, t] = s * channels.payload_bits
            slot_collisions[:, t] = res.collided.reshape(k_eps, n).sum(axis=1)
            slot_blocked[:, t] = n - res.transmit.reshape(k_eps, n).sum(axis=1)
            t += 1

    out = []
    for k in range(k_eps):
        users = slice(k * n, (k + 1) * n)
        out.append(EpisodeMetrics(
            payload_bits=channels.payload_bits,
            num_slots=t_total,
            switch_cost_per_switch=config.switch_cost,
            per_user_bits=pop.bits[users].copy(),
            per_user_collisions=pop.collisions[users].copy(),
            per_user_blocked=pop.blocked[users].copy(),
            per_user_switches=pop.switches[users].copy(),
            slot_bits=slot_bits[k],
            slot_collisions=slot_collisions[k],
            slot_blocked=slot_blocked[k],
            successes=int(successes[k]),
            final_probs=pop.probs[users].copy(),
            final_acceptance=pop.acceptance[users].copy(),
        ))
    return out


def simulate(config: SimConfig, seed: SeedLike | None = None) -> EpisodeMetrics:
    """Run one full episode; ``seed`` overrides ``config.seed``."""
    return simulate_batch(config, [config.seed if seed is None else seed])[0]
