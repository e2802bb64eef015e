"""Concentrator: the timestamping relay between meters and the center.

A concentrator hears broadcasts on lossy one-way links, stamps whatever
arrives with its own (possibly skewed) clock, and forwards the report plus a
small self-state block upstream.  It keeps no per-meter state and never
deduplicates; that is the center's job.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .domain import (
    CONCENTRATOR_NAMESPACE,
    ConcentratorReport,
    ConcentratorState,
    ConfigError,
    MeterMessage,
    id_namespace,
)


@dataclass(frozen=True)
class ConcentratorConfig:
    id: int
    clock_skew_ms: int = 0
    max_skew_ms: int = 1000
    uplink_loss: float = 0.0   # 0 means a reliable wired uplink

    def __post_init__(self) -> None:
        if id_namespace(self.id) != CONCENTRATOR_NAMESPACE:
            raise ConfigError(f"not a concentrator id: {self.id:#x}")
        if abs(self.clock_skew_ms) > self.max_skew_ms:
            raise ConfigError(
                f"concentrator {self.id:#x}: clock skew {self.clock_skew_ms} ms "
                f"exceeds the declared bound {self.max_skew_ms} ms"
            )
        if not 0.0 <= self.uplink_loss <= 1.0:
            raise ConfigError(f"uplink loss must be a probability: {self.uplink_loss}")


def receive(cfg: ConcentratorConfig, msg: MeterMessage, true_time_ms: int,
            state: ConcentratorState | None = None) -> ConcentratorReport:
    """Stamp an incoming message with this concentrator's clock."""
    return ConcentratorReport(
        message=msg,
        concentrator_id=cfg.id,
        rx_time_ms=true_time_ms + cfg.clock_skew_ms,
        state=state or ConcentratorState(),
    )


class VisibilityMap:
    """Static radio adjacency: which concentrators hear which meters.

    Each link carries its own independent loss probability.  Links are kept
    in concentrator-id order so that delivery draws consume the random
    stream in a reproducible order.
    """

    def __init__(self, links: dict[int, list[tuple[int, float]]]) -> None:
        self._links: dict[int, tuple[tuple[int, float], ...]] = {}
        for mid, pairs in links.items():
            seen = set()
            for cid, loss in pairs:
                if cid in seen:
                    raise ConfigError(
                        f"meter {mid:#x}: duplicate link to concentrator {cid:#x}"
                    )
                if not 0.0 <= loss <= 1.0:
                    raise ConfigError(
                        f"meter {mid:#x}: link loss must be a probability, got {loss}"
                    )
                seen.add(cid)
            self._links[mid] = tuple(sorted(pairs))

    def links_for(self, meter_id: int) -> tuple[tuple[int, float], ...]:
        return self._links.get(meter_id, ())

    def meters(self) -> list[int]:
        return sorted(self._links)

    def require_coverage(self, meter_ids) -> None:
        """Every registered meter must be audible somewhere."""
        orphans = [m for m in meter_ids if not self._links.get(m)]
        if orphans:
            listed = ", ".join(f"{m:#x}" for m in orphans)
            raise ConfigError(f"meters with no concentrator link: {listed}")


def broadcast(vis: VisibilityMap, msg: MeterMessage,
              rng: random.Random) -> list[tuple[int, bool]]:
    """One Bernoulli delivery draw per visible link, in concentrator-id order.

    Returns (concentrator_id, delivered) pairs; losses are independent across
    links, so one transmission can reach several concentrators at once.
    """
    return [(cid, rng.random() >= loss) for cid, loss in vis.links_for(msg.meter_id)]
