"""Licensed channels, primary-user occupancy draws and per-slot outcome resolution."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ChannelSet:
    """The licensed spectrum seen by the secondary users.

    ``occupancy_free_prob[m]`` is the probability that channel ``m`` is
    left free by its primary user in a slot.
    """

    num_channels: int
    occupancy_free_prob: tuple[float, ...]
    payload_bits: int
    bandwidth_hz: float = 1.0e6

    def __post_init__(self) -> None:
        theta = tuple(float(x) for x in self.occupancy_free_prob)
        object.__setattr__(self, "occupancy_free_prob", theta)
        if self.num_channels < 1:
            raise ValueError(f"num_channels must be >= 1, got {self.num_channels}")
        if len(theta) != self.num_channels:
            raise ValueError(
                f"occupancy_free_prob has {len(theta)} entries, expected {self.num_channels}"
            )
        if any(not 0.0 <= x <= 1.0 for x in theta):
            raise ValueError(f"occupancy_free_prob entries must lie in [0, 1], got {theta}")
        if self.payload_bits < 1:
            raise ValueError(f"payload_bits must be >= 1, got {self.payload_bits}")
        if not self.bandwidth_hz > 0:
            raise ValueError(f"bandwidth_hz must be positive, got {self.bandwidth_hz}")

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.occupancy_free_prob, dtype=float)


@dataclass(frozen=True)
class ChannelRealization:
    slot_index: int
    free_flags: tuple[bool, ...]


class ChannelStatus(enum.Enum):
    PRIMARY_BUSY = "primary_busy"
    IDLE = "idle"
    SUCCESS = "success"
    COLLISION = "collision"


@dataclass(frozen=True)
class SlotOutcome:
    """Resolved state of every channel in one slot.

    ``tags[m]`` is the channel status; ``chooser_sets[m]`` holds the users
    that picked channel ``m`` (empty sets included).
    """

    tags: tuple[ChannelStatus, ...]
    chooser_sets: Mapping[int, frozenset[int]] = field(default_factory=dict)

    def status(self, channel: int) -> ChannelStatus:
        return self.tags[channel]

    def winner(self, channel: int) -> int | None:
        if self.tags[channel] is ChannelStatus.SUCCESS:
            (user,) = self.chooser_sets[channel]
            return user
        return None

    def count(self, status: ChannelStatus) -> int:
        return sum(1 for t in self.tags if t is status)

    def user_status(self, user: int) -> ChannelStatus | None:
        """Status of the channel ``user`` transmitted on, or None if it stayed silent."""
        for m, users in self.chooser_sets.items():
            if user in users:
                return self.tags[m]
        return None


def draw_free_flags(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Bernoulli(theta) per channel; exactly one uniform consumed per channel.
    return rng.random(theta.shape[0]) < theta


def draw_realization(
    channels: ChannelSet, slot: int, rng: np.random.Generator
) -> ChannelRealization:
    """Draw which channels the primary users leave free in ``slot``."""
    if slot < 0:
        raise ValueError(f"slot must be non-negative, got {slot}")
    flags = draw_free_flags(channels.theta, rng)
    return ChannelRealization(slot_index=slot, free_flags=tuple(bool(f) for f in flags))


def resolve_tags(free: Sequence[bool], chooser_counts: Sequence[int]) -> tuple[ChannelStatus, ...]:
    tags = []
    for is_free, n in zip(free, chooser_counts):
        if not is_free:
            tags.append(ChannelStatus.PRIMARY_BUSY)
        elif n == 0:
            tags.append(ChannelStatus.IDLE)
        elif n == 1:
            tags.append(ChannelStatus.SUCCESS)
        else:
            tags.append(ChannelStatus.COLLISION)
    return tuple(tags)


def classify_outcomes(
    realization: ChannelRealization, choices: Mapping[int, int]
) -> SlotOutcome:
    """Tag every channel given the free flags and each transmitting user's channel.

    A channel pays out only when it is free and chosen by exactly one user;
    two or more users on a free channel collide, and anyone on a busy
    channel is blocked by the primary user.
    """
    num_channels = len(realization.free_flags)
    sets: dict[int, set[int]] = {m: set() for m in range(num_channels)}
    for user, channel in choices.items():
        if not 0 <= channel < num_channels:
            raise IndexError(
                f"user {user} chose channel {channel}, valid range is [0, {num_channels})"
            )
        sets[channel].add(user)
    counts = [len(sets[m]) for m in range(num_channels)]
    return SlotOutcome(
        tags=resolve_tags(realization.free_flags, counts),
        chooser_sets={m: frozenset(s) for m, s in sets.items()},
    )
