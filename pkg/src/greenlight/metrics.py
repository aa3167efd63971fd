"""Episode metrics, the travel-time/queue identity, and convergence detection.

The headline quantities per finished episode:

* D_i   — per-vehicle delay: departure minus stop-line-ready time (steps).
* W     — total waiting events: one vehicle waiting one step; equals the
          negated sum of step rewards.
* T-bar — average travel time: mean delay plus the free-flow time l/mu.
* q-bar — mean summed queue length over the active span tau.

With the point-queue step rules these satisfy T-bar = tau*q-bar/N + l/mu
*exactly*; check_identity verifies it in rational arithmetic so any residual
is a real bookkeeping bug, not float noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import ConfigError
from .sim import TravelLog


@dataclass
class EpisodeMetrics:
    """Travel/queue statistics of one intersection's episode."""

    avg_travel_time_s: float        # mean delay + l/mu over departed vehicles
    avg_delay_s: float
    throughput: int                 # vehicles that crossed the stop line
    avg_queue: float                # W / tau
    total_waiting_events: int       # W, from per-vehicle delays
    trace_waiting_events: int       # negated reward-trace sum (all vehicles)
    tau_s: int                      # last departure - first entry
    vehicles: int                   # N, the departed count used in averages
    entered: int
    pending: int                    # censored: still on a lane at episode end
    censored_avg_travel_time_s: float
    free_flow_time_s: float
    empty: bool = False


def censored_avg_travel_time(log: TravelLog, horizon_s: int) -> float | None:
    """Mean travel time charging pending vehicles their waiting so far.

    Vehicles still queued at the horizon count horizon - ready_time of
    waiting; this keeps starving policies from looking good by never serving
    a lane.  None when nothing entered.
    """
    entered = log.entered_count()
    if entered == 0:
        return None
    waiting = log.censored_waiting(horizon_s)
    return waiting / entered + log.free_flow_time_s


def compute_metrics(log: TravelLog, reward_trace: Sequence[float] | np.ndarray,
                    ) -> EpisodeMetrics:
    """Summarize one episode from its travel log and reward trace."""
    trace = np.asarray(reward_trace, dtype=float)
    trace_w = int(round(-float(trace.sum())))
    horizon = len(trace)
    entered = log.entered_count()
    if entered == 0:
        return EpisodeMetrics(
            avg_travel_time_s=float("nan"), avg_delay_s=float("nan"),
            throughput=0, avg_queue=0.0, total_waiting_events=0,
            trace_waiting_events=trace_w, tau_s=0, vehicles=0, entered=0,
            pending=0, censored_avg_travel_time_s=float("nan"),
            free_flow_time_s=log.free_flow_time_s, empty=True,
        )
    delays = log.delays()
    departed = len(delays)
    pending = entered - departed
    first = log.first_entry()
    last = log.last_departure()
    tau = (last - first) if (last is not None and first is not None) else 0
    total_w = int(sum(delays))
    avg_delay = total_w / departed if departed else float("nan")
    return EpisodeMetrics(
        avg_travel_time_s=avg_delay + log.free_flow_time_s if departed else float("nan"),
        avg_delay_s=avg_delay,
        throughput=departed,
        avg_queue=trace_w / tau if tau > 0 else 0.0,
        total_waiting_events=total_w,
        trace_waiting_events=trace_w,
        tau_s=tau,
        vehicles=departed,
        entered=entered,
        pending=pending,
        censored_avg_travel_time_s=censored_avg_travel_time(log, horizon),
        free_flow_time_s=log.free_flow_time_s,
        empty=False,
    )


def check_identity(metrics: EpisodeMetrics) -> Fraction:
    """Residual |T-bar - (tau*q-bar/N + l/mu)| in exact rational arithmetic.

    tau*q-bar recovers the reward-trace waiting total, so the residual is 0
    precisely when trace-counted waiting equals per-vehicle delay waiting —
    the episode must be fully drained (pending = 0) for that to hold.
    """
    if metrics.empty or metrics.vehicles == 0:
        raise ConfigError("check_identity: needs at least one departed vehicle")
    lmu = Fraction(metrics.free_flow_time_s)  # floats are exact rationals
    lhs = Fraction(metrics.total_waiting_events, metrics.vehicles) + lmu
    rhs = Fraction(metrics.trace_waiting_events, metrics.vehicles) + lmu
    return abs(lhs - rhs)


@dataclass
class ConvergenceReport:
    converged_at: int | None     # episodes elapsed when first stable, else None
    window: int
    rel_tolerance: float


def detect_convergence(curve: Sequence[float], window: int = 10,
                       rel_tolerance: float = 0.05) -> ConvergenceReport:
    """Earliest episode count whose trailing window is stable.

    A window is stable when max - min <= rel_tolerance * window mean.  The
    returned count is the number of episodes consumed (a constant curve
    converges after exactly `window` episodes); None if never stable.
    """
    if window < 2:
        raise ConfigError("convergence: window must be >= 2")
    if rel_tolerance < 0:
        raise ConfigError("convergence: tolerance must be >= 0")
    values = [float(v) for v in curve]
    for end in range(window, len(values) + 1):
        tail = values[end - window:end]
        mean = sum(tail) / window
        if max(tail) - min(tail) <= rel_tolerance * abs(mean):
            return ConvergenceReport(end, window, rel_tolerance)
    return ConvergenceReport(None, window, rel_tolerance)
