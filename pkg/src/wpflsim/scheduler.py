"""Per-round client selection, channel allocation and power control.

The proposed policy assigns clients to subchannels so as to minimize the sum
of element error probabilities, subject to: one subchannel per client, one
client per subchannel, the per-pair rate constraint, and the per-client
participation budget. At full transmit power the error probability is
minimized, so power control reduces to "transmit at the cap" and the rest is
a minimum-cost bipartite assignment. Round-robin and random baselines share
the same feasibility rules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .channel import ChannelRealization, RadioConfig

UNASSIGNED = -1


@dataclass
class ParticipationLedger:
    """Counts how many rounds each client has uploaded (capped by the budget t0)."""

    uploads_used: np.ndarray

    @classmethod
    def fresh(cls, n_clients: int) -> "ParticipationLedger":
        return cls(uploads_used=np.zeros(n_clients, dtype=int))

    def record(self, selected) -> None:
        for n in selected:
            self.uploads_used[n] += 1


@dataclass(frozen=True)
class ScheduleDecision:
    """Immutable outcome of one round of scheduling."""

    selected: tuple            # client indices that upload this round
    assignment: np.ndarray     # per-client subchannel index, UNASSIGNED if none
    power_w: np.ndarray        # per-client transmit power in watts

    @property
    def n_selected(self) -> int:
        return len(self.selected)


def eligible_clients(ledger: ParticipationLedger, t0: int) -> np.ndarray:
    """Clients that still have upload budget left."""
    return np.flatnonzero(ledger.uploads_used < t0)


def build_cost_matrix(real: ChannelRealization, eligible: np.ndarray,
                      r_min_bps: float) -> np.ndarray:
    """(N, K) matrix of uplink element error probabilities.

    Ineligible clients and rate-infeasible pairs are marked infinite, which
    excludes them from the assignment.
    """
    costs = np.full(real.uplink_elem_err.shape, np.inf)
    if len(eligible) == 0:
        return costs
    feasible = real.uplink_rate >= r_min_bps
    for n in eligible:
        costs[n, feasible[n]] = real.uplink_elem_err[n, feasible[n]]
    return costs


def solve_assignment(costs: np.ndarray):
    """Minimum-total-cost one-to-one matching over the finite entries.

    Maximizes cardinality first: any matching that covers one more finite
    pair beats any that covers fewer, regardless of cost (finite costs are
    error probabilities, each at most 1). Returns (pairs, total_cost) with
    pairs sorted by row index.
    """
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        return [], 0.0
    # a uniform penalty larger than any achievable finite total makes the
    # solver avoid forbidden cells whenever structurally possible
    penalty = float(costs[finite].sum()) + 1.0
    work = np.where(finite, costs, penalty)
    rows, cols = linear_sum_assignment(work)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if finite[r, c]]
    total = float(sum(costs[r, c] for r, c in pairs))
    return pairs, total


def schedule_round(real: ChannelRealization, ledger: ParticipationLedger,
                   cfg: RadioConfig, t0: int, r_min_bps: float) -> ScheduleDecision:
    """Optimal selection/allocation for the round; updates the ledger."""
    n = cfg.n_clients
    eligible = eligible_clients(ledger, t0)
    costs = build_cost_matrix(real, eligible, r_min_bps)
    pairs, _ = solve_assignment(costs)
    assignment = np.full(n, UNASSIGNED, dtype=int)
    power = np.zeros(n)
    for client, chan in pairs:
        assignment[client] = chan
        power[client] = cfg.client_power_w
    selected = tuple(sorted(client for client, _ in pairs))
    ledger.record(selected)
    return ScheduleDecision(selected=selected, assignment=assignment, power_w=power)


def round_robin_schedule(real: ChannelRealization, ledger: ParticipationLedger,
                         cfg: RadioConfig, t0: int, r_min_bps: float,
                         cursor: int):
    """Next K eligible clients in cyclic order, greedy best-gain channel each.

    Returns (decision, new_cursor).
    """
    n, k = cfg.n_clients, cfg.n_subchannels
    eligible = set(eligible_clients(ledger, t0).tolist())
    picked = []
    last_taken = None
    for step in range(n):
        cand = (cursor + step) % n
        if cand in eligible:
            picked.append(cand)
            last_taken = cand
            if len(picked) == k:
                break
    assignment = np.full(n, UNASSIGNED, dtype=int)
    power = np.zeros(n)
    free = np.ones(k, dtype=bool)
    feasible = real.uplink_rate >= r_min_bps
    for client in picked:
        usable = np.flatnonzero(free & feasible[client])
        if len(usable) == 0:
            continue
        chan = usable[np.argmax(real.uplink_gain[client, usable])]
        assignment[client] = chan
        power[client] = cfg.client_power_w
        free[chan] = False
    selected = tuple(sorted(c for c in picked if assignment[c] != UNASSIGNED))
    ledger.record(selected)
    new_cursor = (last_taken + 1) % n if last_taken is not None else cursor
    return ScheduleDecision(selected=selected, assignment=assignment, power_w=power), new_cursor


def random_schedule(real: ChannelRealization, ledger: ParticipationLedger,
                    cfg: RadioConfig, t0: int, r_min_bps: float,
                    rng: np.random.Generator) -> ScheduleDecision:
    """Uniform random subset of eligible clients, random feasible channel each."""
    n, k = cfg.n_clients, cfg.n_subchannels
    eligible = eligible_clients(ledger, t0)
    subset = rng.permutation(eligible)[:k]
    assignment = np.full(n, UNASSIGNED, dtype=int)
    power = np.zeros(n)
    free = np.ones(k, dtype=bool)
    feasible = real.uplink_rate >= r_min_bps
    for client in subset:
        usable = np.flatnonzero(free & feasible[client])
        if len(usable) == 0:
            continue
        chan = usable[rng.integers(len(usable))]
        assignment[client] = chan
        power[client] = cfg.client_power_w
        free[chan] = False
    selected = tuple(sorted(int(c) for c in subset if assignment[c] != UNASSIGNED))
    ledger.record(selected)
    return ScheduleDecision(selected=selected, assignment=assignment, power_w=power)
