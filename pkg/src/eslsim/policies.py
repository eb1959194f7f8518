"""Allocation policies: exhaustive-serve-longest, oldest-task-first, and
fixed-dwell cyclic patrol, plus dwell tuning for the cyclic family.

All deciders return feasible joint actions for the state they are given;
they never emit colliding moves.  Stateful policies (task ages, patrol
cursors) carry their bookkeeping in explicit objects so episodes stay
replayable.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .model import (
    IDLE_ACTION,
    SERVE_ACTION,
    JointAction,
    ModelConfig,
    RobotAction,
    SlotDelta,
    SystemState,
    switch_to,
)

POLICY_NAMES = ("esl", "fcfs", "cyclic")


class AgeBookDesyncError(RuntimeError):
    """Per-location age lists disagree with the queue lengths."""


class DegenerateRateError(ValueError):
    """Dwell tuning needs an arrival probability strictly inside (0, 1)."""


def esl_decide(state: SystemState) -> JointAction:
    """Serve wherever you stand if tasks wait; send the idle robots to the
    longest unclaimed nonempty queues.

    Robots at nonempty locations serve.  The rest are matched, in increasing
    robot index, to distinct unoccupied nonempty locations ordered by queue
    length (longest first, ties to the lower location index).  Robots left
    over after the nonempty locations run out idle in place.
    """
    robots, queues = state
    actions: list[RobotAction | None] = [None] * len(robots)
    seekers: list[int] = []
    for r, loc in enumerate(robots):
        if queues[loc] > 0:
            actions[r] = SERVE_ACTION
        else:
            seekers.append(r)
    if seekers:
        occupied = set(robots)
        targets = [
            i
            for i in range(len(queues))
            if queues[i] > 0 and i not in occupied
        ]
        targets.sort(key=lambda i: (-queues[i], i))
        for r, dest in zip(seekers, targets):
            actions[r] = switch_to(dest)
        for r in seekers[len(targets):]:
            actions[r] = IDLE_ACTION
    return tuple(actions)


def switch_to_shortest_decide(state: SystemState) -> JointAction:
    """Deliberately bad variant of esl_decide that targets the shortest
    nonempty queues instead of the longest.

    Exists so the exact-solver optimality checker can be shown to catch a
    rule that breaks the longest-first preference.
    """
    robots, queues = state
    actions: list[RobotAction | None] = [None] * len(robots)
    seekers: list[int] = []
    for r, loc in enumerate(robots):
        if queues[loc] > 0:
            actions[r] = SERVE_ACTION
        else:
            seekers.append(r)
    if seekers:
        occupied = set(robots)
        targets = [
            i
            for i in range(len(queues))
            if queues[i] > 0 and i not in occupied
        ]
        targets.sort(key=lambda i: (queues[i], i))
        for r, dest in zip(seekers, targets):
            actions[r] = switch_to(dest)
        for r in seekers[len(targets):]:
            actions[r] = IDLE_ACTION
    return tuple(actions)


class TaskAgeBook:
    """Arrival slots of the tasks still waiting, oldest first per location.

    The book mirrors the queue vector exactly: len(stamps[i]) must equal
    queues[i] at all times.  Departures pop the head (FIFO service), fresh
    arrivals append the current slot index.
    """

    __slots__ = ("stamps",)

    def __init__(self, stamps: list[deque[int]]) -> None:
        self.stamps = stamps

    @classmethod
    def empty(cls, num_locations: int) -> "TaskAgeBook":
        return cls([deque() for _ in range(num_locations)])

    @classmethod
    def from_state(cls, state: SystemState, stamp: int = 0) -> "TaskAgeBook":
        """Book for a mid-flight start: tasks already waiting share a stamp."""
        return cls([deque([stamp] * q) for q in state.queues])

    def record(self, delta: SlotDelta, slot: int) -> None:
        stamps = self.stamps
        for i, d in enumerate(delta.departures):
            if d:
                stamps[i].popleft()
        for i, a in enumerate(delta.arrivals):
            if a:
                stamps[i].append(slot)

    def check(self, state: SystemState) -> None:
        for i, q in enumerate(state.queues):
            if len(self.stamps[i]) != q:
                raise AgeBookDesyncError("age book desync")


def fcfs_decide(
    state: SystemState, book: TaskAgeBook, now: int
) -> JointAction:
    """Chase the globally oldest waiting tasks, first come first served.

    Nonempty locations are ranked by the arrival slot of their oldest task
    (earlier stamp first); ties prefer a location already hosting a robot,
    then the lower location index.  Walking the ranking, a location whose
    host is still unmatched keeps it (the host serves in place); otherwise
    the lowest-indexed unmatched robot switches there.  That move is always
    collision-free: when the target hosts a robot at all, that robot was
    matched earlier in the walk, necessarily as a switcher, so it is
    leaving.  Robots left unmatched serve their own queue if it is nonempty
    and idle otherwise.
    """
    del now  # ranking depends only on stamp order
    book.check(state)
    robots, queues = state
    num_robots = len(robots)
    host = {loc: r for r, loc in enumerate(robots)}
    ranked = sorted(
        (i for i in range(len(queues)) if queues[i] > 0),
        key=lambda i: (book.stamps[i][0], 0 if i in host else 1, i),
    )
    actions: list[RobotAction | None] = [None] * num_robots
    assigned = 0
    for loc in ranked:
        if assigned == num_robots:
            break
        r = host.get(loc)
        if r is not None and actions[r] is None:
            actions[r] = SERVE_ACTION
            assigned += 1
            continue
        for r2 in range(num_robots):
            if actions[r2] is None:
                actions[r2] = switch_to(loc)
                assigned += 1
                break
    for r in range(num_robots):
        if actions[r] is None:
            actions[r] = (
                SERVE_ACTION if queues[robots[r]] > 0 else IDLE_ACTION
            )
    return tuple(actions)


@dataclass(frozen=True)
class CyclicPlan:
    """Patrol bookkeeping for the fixed-dwell cyclic policy.

    Locations are split into contiguous blocks, one per robot.  cursors[r]
    is the index within blocks[r] the robot is currently committed to;
    counters[r] is how many dwell slots remain there.  Travel slots do not
    consume dwell.
    """

    blocks: tuple[tuple[int, ...], ...]
    t_dwell: int
    cursors: tuple[int, ...]
    counters: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.t_dwell < 1:
            raise ValueError("dwell must be at least one slot")
        seen: set[int] = set()
        for block in self.blocks:
            if not block:
                raise ValueError("every robot needs a nonempty block")
            for loc in block:
                if loc in seen:
                    raise ValueError("blocks must not overlap")
                seen.add(loc)

    @classmethod
    def build(
        cls, num_locations: int, num_robots: int, t_dwell: int
    ) -> "CyclicPlan":
        """Split 0..N-1 into contiguous, nearly equal blocks."""
        sizes = [
            num_locations // num_robots
            + (1 if r < num_locations % num_robots else 0)
            for r in range(num_robots)
        ]
        blocks = []
        start = 0
        for size in sizes:
            blocks.append(tuple(range(start, start + size)))
            start += size
        return cls(
            tuple(blocks), t_dwell, (0,) * num_robots, (t_dwell,) * num_robots
        )


def cyclic_decide(
    state: SystemState, plan: CyclicPlan
) -> tuple[JointAction, CyclicPlan]:
    """One slot of fixed-dwell patrol; returns the action and updated plan.

    Each robot heads for the block location its cursor points at, dwells
    there for t_dwell slots serving whatever is present (idling on empty
    slots), then moves to the next location in its block.  A robot that
    finds itself off its post, including at episode start, spends the slot
    travelling there; block heads are distinct so those moves never collide.
    """
    robots, queues = state
    actions: list[RobotAction] = []
    cursors = list(plan.cursors)
    counters = list(plan.counters)
    for r, loc in enumerate(robots):
        block = plan.blocks[r]
        target = block[cursors[r]]
        if loc != target:
            actions.append(switch_to(target))
        elif len(block) == 1:
            actions.append(SERVE_ACTION if queues[loc] > 0 else IDLE_ACTION)
        elif counters[r] > 0:
            actions.append(SERVE_ACTION if queues[loc] > 0 else IDLE_ACTION)
            counters[r] -= 1
        else:
            cursors[r] = (cursors[r] + 1) % len(block)
            counters[r] = plan.t_dwell
            actions.append(switch_to(block[cursors[r]]))
    new_plan = CyclicPlan(
        plan.blocks, plan.t_dwell, tuple(cursors), tuple(counters)
    )
    return tuple(actions), new_plan


def dwell_objective(p: float, n: int, total_time: float) -> float:
    """Expected cost proxy for patrolling n symmetric queues for total_time
    slots per sweep: time per location is total_time / n.

    Trades residual work left behind at departure against the share of the
    sweep lost to travel.  Smaller is better.
    """
    if not 0.0 < p < 1.0:
        raise DegenerateRateError("degenerate rate")
    if n < 1:
        raise ValueError("block size must be at least 1")
    if total_time <= 0.0:
        raise ValueError("total monitoring time must be positive")
    u = total_time / n
    g = (1.0 - p) ** u
    return (total_time + n - u + u * g) / (1.0 - g)


def optimize_dwell(p: float, n: int, search_max: int = 1000) -> int:
    """Best whole-slot dwell per location by direct scan.

    Evaluates the patrol objective at total_time = n * t for every integer
    t in [1, search_max] and returns the argmin, preferring the smaller t
    on ties.
    """
    if not 0.0 < p < 1.0:
        raise DegenerateRateError("degenerate rate")
    if n < 1:
        raise ValueError("block size must be at least 1")
    if search_max < 1:
        raise ValueError("search_max must be at least 1")
    best_t = 1
    best_f = dwell_objective(p, n, float(n))
    for t in range(2, search_max + 1):
        f = dwell_objective(p, n, float(n * t))
        if f < best_f:
            best_t, best_f = t, f
    return best_t


def continuous_dwell(p: float, n: int, search_max: int = 1000) -> float:
    """Real-valued dwell minimizing the patrol objective.

    Returns the unconstrained per-location dwell u* (total sweep time
    divided by n).  A coarse integer scan brackets the minimum, then a
    bounded scalar minimize polishes it.
    """
    from scipy.optimize import minimize_scalar

    if not 0.0 < p < 1.0:
        raise DegenerateRateError("degenerate rate")
    if n < 1:
        raise ValueError("block size must be at least 1")
    best_u = 1
    best_f = dwell_objective(p, n, float(n))
    for u in range(2, search_max + 1):
        f = dwell_objective(p, n, float(n * u))
        if f < best_f:
            best_u, best_f = u, f
    lo = max(best_u - 1, 1e-6)
    hi = min(best_u + 1, float(search_max))
    res = minimize_scalar(
        lambda u: dwell_objective(p, n, n * u),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-9},
    )
    return float(res.x)


def tuned_dwell(p: float, n: int, search_max: int = 1000) -> int:
    """Whole-slot dwell used by the benchmark cyclic policy: minimize the
    patrol objective over continuous dwell, then round down (floor, but
    never below one slot)."""
    u_star = continuous_dwell(p, n, search_max)
    return max(1, math.floor(u_star))


def dwell_metadata(p: float, n: int, search_max: int = 1000) -> dict:
    """Both dwell tuning conventions with their objective values, for run
    manifests: the integer scan argmin and the floored continuous argmin."""
    t_scan = optimize_dwell(p, n, search_max)
    u_star = continuous_dwell(p, n, search_max)
    t_floor = max(1, math.floor(u_star))
    t_ceil = t_floor + 1
    return {
        "p": p,
        "block_size": n,
        "scan_t": t_scan,
        "scan_objective": dwell_objective(p, n, float(n * t_scan)),
        "continuous_u": u_star,
        "floor_t": t_floor,
        "floor_objective": dwell_objective(p, n, float(n * t_floor)),
        "ceil_t": t_ceil,
        "ceil_objective": dwell_objective(p, n, float(n * t_ceil)),
    }


class EslPolicy:
    """Stateless wrapper around esl_decide."""

    name = "esl"

    def reset(self, state: SystemState) -> None:
        pass

    def decide(self, state: SystemState, now: int) -> JointAction:
        return esl_decide(state)

    def observe(self, delta: SlotDelta, now: int) -> None:
        pass


class FcfsPolicy:
    """Oldest-task-first policy; owns the age book for the episode."""

    name = "fcfs"

    def __init__(self, num_locations: int) -> None:
        self.num_locations = num_locations
        self.book = TaskAgeBook.empty(num_locations)

    def reset(self, state: SystemState) -> None:
        # Tasks present before the first slot all get stamp 0.
        self.book = TaskAgeBook.from_state(state, 0)

    def decide(self, state: SystemState, now: int) -> JointAction:
        return fcfs_decide(state, self.book, now)

    def observe(self, delta: SlotDelta, now: int) -> None:
        self.book.record(delta, now)

    def audit(self, state: SystemState) -> None:
        self.book.check(state)


class CyclicPolicy:
    """Fixed-dwell patrol; owns the plan cursors for the episode."""

    name = "cyclic"

    def __init__(
        self, num_locations: int, num_robots: int, t_dwell: int
    ) -> None:
        self._fresh = CyclicPlan.build(num_locations, num_robots, t_dwell)
        self.plan = self._fresh

    def reset(self, state: SystemState) -> None:
        self.plan = self._fresh

    def decide(self, state: SystemState, now: int) -> JointAction:
        joint, self.plan = cyclic_decide(state, self.plan)
        return joint

    def observe(self, delta: SlotDelta, now: int) -> None:
        pass


def make_policy(name: str, model: ModelConfig, **params):
    """Instantiate a policy by its public name: esl, fcfs or cyclic.

    cyclic accepts t_dwell (whole slots) and search_max; when t_dwell is
    omitted the benchmark tuning (floored continuous argmin) is applied,
    which requires a symmetric arrival vector.
    """
    if name == "esl":
        return EslPolicy()
    if name == "fcfs":
        return FcfsPolicy(model.num_locations)
    if name == "cyclic":
        t_dwell = params.get("t_dwell")
        if t_dwell is None:
            probs = set(model.arrival_probs)
            if len(probs) != 1:
                raise ValueError(
                    "automatic dwell tuning needs symmetric arrival rates"
                )
            n = -(-model.num_locations // model.num_robots)  # ceil
            t_dwell = tuned_dwell(
                model.arrival_probs[0], n, params.get("search_max", 1000)
            )
        return CyclicPolicy(
            model.num_locations, model.num_robots, int(t_dwell)
        )
    raise ValueError(f"unknown policy name: {name!r}")
