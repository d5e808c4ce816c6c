"""Channel-selection learning rules for secondary users.

Probability vectors are plain float arrays over the channels.  Every
update exists in two forms: a single-vector function that validates its
arguments, and a ``*_rows`` batch function used by the simulator that
updates selected rows of an ``(N, M)`` matrix in place.  The single-vector
functions delegate to the batch ones so both paths share one arithmetic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-9


def init_uniform(num_channels: int) -> np.ndarray:
    if num_channels < 1:
        raise ValueError(f"need at least one channel, got {num_channels}")
    return np.full(num_channels, 1.0 / num_channels)


def is_probability_vector(p: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(
        p.ndim == 1
        and p.size >= 1
        and np.all(p >= 0.0)
        and np.all(p <= 1.0)
        and abs(p.sum() - 1.0) <= tol
    )


def _check_vector(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not is_probability_vector(p):
        raise ValueError(f"not a probability vector: {p}")
    return p


def _check_index(p: np.ndarray, chosen: int) -> None:
    if not 0 <= chosen < p.shape[0]:
        raise IndexError(f"channel {chosen} out of range for {p.shape[0]} channels")


def _check_reward_rate(rate: float) -> None:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"reward rate must lie in (0, 1), got {rate}")


def _check_penalty_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"penalty rate must lie in [0, 1), got {rate}")


@dataclass(frozen=True)
class PolicyParams:
    reward_rate: float = 0.5
    penalty_rate: float = 0.5
    num_actions: int = 10

    def __post_init__(self) -> None:
        _check_reward_rate(self.reward_rate)
        _check_penalty_rate(self.penalty_rate)
        if self.num_actions < 2:
            raise ValueError(f"num_actions must be >= 2, got {self.num_actions}")


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------


def sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one channel per row.

    ``u`` must lie in (0, 1]; a channel with zero mass is then never picked.
    """
    cum = np.cumsum(probs, axis=1)
    target = u * cum[:, -1]
    idx = np.count_nonzero(cum < target[:, None], axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_channel(p, rng: np.random.Generator) -> int:
    p = _check_vector(p)
    u = 1.0 - rng.random(1)
    return int(sample_rows(p[None, :], u)[0])


# --------------------------------------------------------------------------
# Linear reward / penalty
# --------------------------------------------------------------------------


def reward_rows(probs: np.ndarray, rows: np.ndarray, chosen: np.ndarray, rates: np.ndarray) -> None:
    """Reward update applied in place to ``probs[rows]``.

    The chosen channel moves towards 1 by ``rate * (1 - p)``; every other
    channel shrinks by the factor ``1 - rate``.
    """
    if rows.size == 0:
        return
    sub = probs[rows]
    picked = sub[np.arange(rows.size), chosen]
    sub *= (1.0 - rates)[:, None]
    sub[np.arange(rows.size), chosen] = picked + rates * (1.0 - picked)
    np.clip(sub, 0.0, 1.0, out=sub)
    probs[rows] = sub


def penalty_rows(
    probs: np.ndarray, rows: np.ndarray, chosen: np.ndarray, rates: np.ndarray, num_actions: int
) -> None:
    """Penalty update applied in place to ``probs[rows]``.

    The chosen channel shrinks by ``1 - rate``; the freed mass is spread
    evenly over the other ``num_actions - 1`` channels.
    """
    if rows.size == 0:
        return
    sub = probs[rows]
    picked = sub[np.arange(rows.size), chosen]
    sub *= (1.0 - rates)[:, None]
    sub += (rates / (num_actions - 1))[:, None]
    sub[np.arange(rows.size), chosen] = (1.0 - rates) * picked
    np.clip(sub, 0.0, 1.0, out=sub)
    probs[rows] = sub


def reward_update(p, chosen: int, rate: float) -> np.ndarray:
    p = _check_vector(p)
    _check_index(p, chosen)
    _check_reward_rate(rate)
    out = p[None, :].copy()
    reward_rows(out, np.array([0]), np.array([chosen]), np.array([rate], dtype=float))
    return out[0]


def penalty_update(p, chosen: int, rate: float, num_actions: int | None = None) -> np.ndarray:
    p = _check_vector(p)
    _check_index(p, chosen)
    _check_penalty_rate(rate)
    r = p.shape[0] if num_actions is None else num_actions
    if r < 2:
        raise ValueError(f"penalty update needs at least 2 actions, got {r}")
    out = p[None, :].copy()
    penalty_rows(out, np.array([0]), np.array([chosen]), np.array([rate], dtype=float), r)
    return out[0]


def linear_g(p, rate: float) -> np.ndarray:
    """Per-channel decrement ``rate * p_j`` of the linear reward scheme."""
    return rate * np.asarray(p, dtype=float)


# --------------------------------------------------------------------------
# Q-model: graded environment responses
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QModelConfig:
    """Graded response set around a decision threshold.

    ``favorable_levels`` are increasing; entry ``k-1`` is favorable level
    ``k`` (level 1 is the best).  ``unfavorable_levels`` are also stored in
    increasing order, so the *last* entry is unfavorable level 1 (the
    worst).  ``favorable_rates[k-1]`` and ``unfavorable_rates[k-1]`` are
    the reinforcement rates of level ``k`` on each side.
    """

    favorable_levels: tuple[float, ...] = (0.001, 0.01, 0.05)
    threshold: float = 0.5
    unfavorable_levels: tuple[float, ...] = (0.75, 1.0)
    favorable_rates: tuple[float, ...] = (0.5, 0.3, 0.1)
    unfavorable_rates: tuple[float, ...] = (0.5, 0.25)

    def __post_init__(self) -> None:
        for name in ("favorable_levels", "unfavorable_levels", "favorable_rates", "unfavorable_rates"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        fav, unfav = self.favorable_levels, self.unfavorable_levels
        if not fav or not unfav:
            raise ValueError("need at least one favorable and one unfavorable level")
        ordered = (*fav, self.threshold, *unfav)
        if not (ordered[0] >= 0.0 and ordered[-1] <= 1.0):
            raise ValueError(f"levels must lie in [0, 1], got {ordered}")
        if any(b <= a for a, b in zip(ordered, ordered[1:])):
            raise ValueError(
                "levels must be strictly increasing: favorable < threshold < unfavorable, "
                f"got {ordered}"
            )
        if len(self.favorable_rates) != len(fav):
            raise ValueError(f"expected {len(fav)} favorable rates, got {len(self.favorable_rates)}")
        if len(self.unfavorable_rates) != len(unfav):
            raise ValueError(
                f"expected {len(unfav)} unfavorable rates, got {len(self.unfavorable_rates)}"
            )
        for a in self.favorable_rates:
            _check_reward_rate(a)
        for b in self.unfavorable_rates:
            _check_penalty_rate(b)

    @property
    def num_favorable(self) -> int:
        return len(self.favorable_levels)

    @property
    def num_unfavorable(self) -> int:
        return len(self.unfavorable_levels)

    @classmethod
    def binary(cls, reward_rate: float, penalty_rate: float, threshold: float = 0.5) -> "QModelConfig":
        """Single level per side; behaves as plain reward-penalty."""
        return cls(
            favorable_levels=(0.0,),
            threshold=threshold,
            unfavorable_levels=(1.0,),
            favorable_rates=(reward_rate,),
            unfavorable_rates=(penalty_rate,),
        )


@dataclass(frozen=True)
class QResponse:
    favorable: bool
    level_index: int
    level_value: float


def _nearest(levels: np.ndarray, values: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, i.e. the lower level value on ties.
    return np.argmin(np.abs(values[:, None] - levels[None, :]), axis=1)


def q_classify_batch(values: np.ndarray, config: QModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return (favorable mask, 1-based level index) for each response value."""
    values = np.asarray(values, dtype=float)
    favorable = values <= config.threshold
    level = np.empty(values.shape, dtype=np.int64)
    fav_levels = np.asarray(config.favorable_levels)
    unfav_levels = np.asarray(config.unfavorable_levels)
    if favorable.any():
        level[favorable] = _nearest(fav_levels, values[favorable]) + 1
    bad = ~favorable
    if bad.any():
        pos = _nearest(unfav_levels, values[bad])
        level[bad] = config.num_unfavorable - pos
    return favorable, level


def q_classify(response_value: float, config: QModelConfig) -> QResponse:
    if not 0.0 <= response_value <= 1.0:
        raise ValueError(f"response value must lie in [0, 1], got {response_value}")
    fav, level = q_classify_batch(np.array([response_value]), config)
    k = int(level[0])
    if fav[0]:
        return QResponse(True, k, config.favorable_levels[k - 1])
    return QResponse(False, k, config.unfavorable_levels[config.num_unfavorable - k])


def q_rates(favorable: np.ndarray, level: np.ndarray, config: QModelConfig) -> np.ndarray:
    fav_rates = np.asarray(config.favorable_rates)
    unfav_rates = np.asarray(config.unfavorable_rates)
    return np.where(
        favorable,
        fav_rates[np.minimum(level, config.num_favorable) - 1],
        unfav_rates[np.minimum(level, config.num_unfavorable) - 1],
    )


def q_update(p, chosen: int, response: QResponse, config: QModelConfig, num_actions: int | None = None) -> np.ndarray:
    if response.favorable:
        if not 1 <= response.level_index <= config.num_favorable:
            raise IndexError(
                f"favorable level {response.level_index} outside 1..{config.num_favorable}"
            )
        return reward_update(p, chosen, config.favorable_rates[response.level_index - 1])
    if not 1 <= response.level_index <= config.num_unfavorable:
        raise IndexError(
            f"unfavorable level {response.level_index} outside 1..{config.num_unfavorable}"
        )
    return penalty_update(p, chosen, config.unfavorable_rates[response.level_index - 1], num_actions)


# --------------------------------------------------------------------------
# Admission control
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmissionState:
    acceptance: float
    step: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.acceptance <= 1.0:
            raise ValueError(f"acceptance must lie in [0, 1], got {self.acceptance}")
        if not 0.0 < self.step < 1.0:
            raise ValueError(f"step must lie in (0, 1), got {self.step}")


def admission_rows(acceptance: np.ndarray, step: np.ndarray, collided: np.ndarray) -> np.ndarray:
    return np.where(
        collided,
        np.maximum(acceptance - step, 0.0),
        np.minimum(acceptance + step, 1.0),
    )


def admission_update(state: AdmissionState, collided: bool) -> AdmissionState:
    if collided:
        return AdmissionState(max(state.acceptance - state.step, 0.0), state.step)
    return AdmissionState(min(state.acceptance + state.step, 1.0), state.step)


def admission_gate(state: AdmissionState, rng: np.random.Generator) -> bool:
    """True when the user may transmit this slot (probability = acceptance)."""
    return bool(rng.random() < state.acceptance)


# --------------------------------------------------------------------------
# Policy variants
# --------------------------------------------------------------------------


class PolicyKind(enum.Enum):
    CLASSIC_UNIFORM = "classic"
    REWARD_ONLY = "reward_only"
    REWARD_PENALTY = "reward_penalty"
    QMODEL = "qmodel"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    params: PolicyParams = field(default_factory=PolicyParams)
    qmodel: QModelConfig | None = None
    admission: bool = True
    initial_acceptance: float = 1.0

    def __post_init__(self) -> None:
        if self.kind is PolicyKind.QMODEL and self.qmodel is None:
            raise ValueError("QMODEL policy requires a QModelConfig")
        if not 0.0 <= self.initial_acceptance <= 1.0:
            raise ValueError(f"initial_acceptance must lie in [0, 1], got {self.initial_acceptance}")

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def gated(self) -> bool:
        return self.kind is PolicyKind.QMODEL and self.admission


def policy_from_name(
    name: str,
    params: PolicyParams,
    qmodel: QModelConfig | None = None,
    admission: bool = True,
    initial_acceptance: float = 1.0,
) -> Policy:
    try:
        kind = PolicyKind(name)
    except ValueError:
        valid = ", ".join(k.value for k in PolicyKind)
        raise ValueError(f"unknown policy {name!r}; expected one of {valid}") from None
    if kind is PolicyKind.QMODEL and qmodel is None:
        qmodel = QModelConfig()
    return Policy(kind, params, qmodel, admission, initial_acceptance)

