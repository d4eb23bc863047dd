"""Simulated shared state bus with latency and seeded message loss.

Every robot periodically broadcasts its kinematic state; a broadcast
becomes visible to all other robots after a fixed latency unless the
whole message is dropped.  Only the last two messages per sender are
retained, which bounds memory and still lets a reader see the newest
delivered state when the most recent send is still in flight.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .core import RobotState


@dataclass(frozen=True)
class BusConfig:
    broadcast_period: float = 0.05
    latency: float = 0.01
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.broadcast_period) or self.broadcast_period <= 0.0:
            raise ValueError(f"bus.broadcast_period must be positive, got {self.broadcast_period}")
        if not math.isfinite(self.latency) or self.latency < 0.0:
            raise ValueError(f"bus.latency must be >= 0, got {self.latency}")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError(f"bus.drop_probability must be in [0, 1], got {self.drop_probability}")


class MessageBus:
    """In-process stand-in for a lossy broadcast radio."""

    def __init__(self, config: BusConfig):
        self.config = config
        self._rng = random.Random(config.seed)
        self._store: dict[int, list[tuple[float, RobotState]]] = {}
        self._last_send: dict[int, float] = {}

    def broadcast(self, state: RobotState, send_time: float) -> bool:
        """Queue one state for delivery at send_time + latency.

        Returns False when the seeded loss model drops the message.  A
        draw is consumed for every call so runs with different drop
        probabilities stay aligned on the same seed.
        """
        last = self._last_send.get(state.robot_id)
        if last is not None and send_time < last:
            raise ValueError(
                f"robot {state.robot_id} broadcast went back in time: {send_time} < {last}")
        self._last_send[state.robot_id] = send_time
        dropped = self._rng.random() < self.config.drop_probability
        if dropped:
            return False
        queue = self._store.setdefault(state.robot_id, [])
        queue.append((send_time + self.config.latency, state))
        if len(queue) > 2:
            del queue[0]
        return True

    def latest_states(self, receiver_id: int, now: float) -> dict[int, RobotState]:
        """Newest delivered state per sender, excluding the receiver itself."""
        out = {}
        for sender, queue in self._store.items():
            if sender == receiver_id:
                continue
            best = None
            for delivery, state in queue:
                if delivery <= now and (best is None or state.stamp >= best.stamp):
                    best = state
            if best is not None:
                out[sender] = best
        return out
