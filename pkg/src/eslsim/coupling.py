"""Paired sample-path experiments behind the policy-structure results.

Each scenario runs two systems, G and PI, slot by slot on one random seed.
G takes a single deviating move at slot 0 (idle instead of serve, switch
away instead of serve, idle instead of switch, or switch to the shorter of
two queues); PI takes the reference move.  Both then follow the scenario's
scripted continuation.  Two scenarios feed PI a relabeled copy of the
arrival draw (the streams of locations 0 and 1 swapped), which preserves
the joint law because those two locations share an arrival probability.

The object of interest is the cumulative departure gap
gap(t) = D_PI(t) - D_G(t), which by work conservation equals the backlog
difference sum x_G(t) - sum x_PI(t) on every path; the harness asserts that
identity every slot.  Each scenario predicts an exact piecewise shape for
gap and a slot at which the two systems merge (possibly after relabeling),
after which the gap is frozen and the discounted-cost difference can be
closed in geometric form.

Scenario codes (fixed identifiers in configs and reports):
  prop1A  deviation: switch away from a nonempty queue instead of serving.
  prop1B  deviation: idle at a nonempty queue instead of serving.
  prop2   deviation: idle at an empty queue instead of switching to a
          nonempty one; PI runs on swapped streams.
  prop4   deviation: switch to the shorter of two nonempty queues; PI runs
          on swapped streams.

Robot 0 is always the protagonist.  Any other robots are parked: they
serve their own location when it is nonempty and idle otherwise, behave
identically in both systems, and must sit away from the locations the
scenario manipulates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    IDLE_ACTION,
    SERVE_ACTION,
    ModelConfig,
    RobotAction,
    SystemState,
    sample_arrivals,
    step,
    switch_to,
    validate_state,
)

SCENARIO_NAMES = ("prop1A", "prop1B", "prop2", "prop4")


class ScenarioPreconditionError(ValueError):
    """Initial state or rates do not satisfy the scenario hypothesis."""


@dataclass(frozen=True)
class CouplingScenario:
    """A scenario code with a concrete instance and start state."""

    name: str
    model: ModelConfig
    initial_state: SystemState


@dataclass
class CouplingReport:
    """Outcome of one paired run.

    gap[t] is the departure gap at slot-start t; gap[0] = 0.  tau is the
    scenario's landmark slot: the deviator's return slot (prop1A), the
    catch-up slot (prop1B), the slot the working queues first agree
    (prop2), or the slot the shorter queue first empties (prop4).  k is the
    prop4 catch-up length, None elsewhere.  Once coupled, the gap is frozen
    at terminal_gap and discounted_diff includes the geometric tail; for an
    uncoupled run (horizon too short) discounted_diff is the truncated sum.
    """

    scenario: str
    seed: int
    horizon: int
    discount: float
    initial_state: SystemState
    gap: tuple[int, ...]
    tau: int | None
    k: int | None
    coupling_time: int | None
    coupled: bool
    terminal_gap: int
    discounted_diff: float


def make_scenario(
    name: str,
    *,
    p: float = 0.1,
    discount: float = 0.9,
    model: ModelConfig | None = None,
    initial_state: SystemState | None = None,
) -> CouplingScenario:
    """Scenario with canonical defaults; overrides are validated."""
    defaults = {
        "prop1A": (2, (0,), (2, 1)),
        "prop1B": (2, (0,), (3, 0)),
        "prop2": (2, (0,), (0, 3)),
        "prop4": (3, (2,), (1, 3, 0)),
    }
    if name not in defaults:
        raise ScenarioPreconditionError("scenario precondition")
    n, robots, queues = defaults[name]
    if model is None:
        model = ModelConfig.symmetric(n, len(robots), p, discount)
    if initial_state is None:
        initial_state = SystemState(robots, queues)
    scenario = CouplingScenario(name, model, initial_state)
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: CouplingScenario) -> None:
    """Raise ScenarioPreconditionError unless the hypothesis holds."""
    name = scenario.name
    model = scenario.model
    state = scenario.initial_state
    try:
        validate_state(state, model)
    except ValueError as exc:
        raise ScenarioPreconditionError("scenario precondition") from exc
    if name not in SCENARIO_NAMES:
        raise ScenarioPreconditionError("scenario precondition")
    robots, queues = state
    start = robots[0]
    probs = model.arrival_probs
    parked = robots[1:]
    if name == "prop1A":
        # robot 0 must have local work to skip, a second location to visit,
        # and an exit rate below one so it returns
        if queues[start] < 1 or probs[start] >= 1.0:
            raise ScenarioPreconditionError("scenario precondition")
        free = model.num_locations - len(parked)
        if free < 2:
            raise ScenarioPreconditionError("scenario precondition")
    elif name == "prop1B":
        if queues[start] < 1 or probs[start] >= 1.0:
            raise ScenarioPreconditionError("scenario precondition")
    elif name == "prop2":
        # robot 0 idles at an empty location 0; the alternative is the
        # nonempty, unoccupied location 1; the two streams must be
        # exchangeable for the relabeling to preserve the law
        if start != 0 or queues[0] != 0 or queues[1] < 1:
            raise ScenarioPreconditionError("scenario precondition")
        if 1 in parked or 0 in parked:
            raise ScenarioPreconditionError("scenario precondition")
        if probs[0] != probs[1] or probs[0] >= 1.0:
            raise ScenarioPreconditionError("scenario precondition")
    elif name == "prop4":
        # locations 0 (shorter) and 1 (longer) both nonempty and free;
        # robot 0 watches from an empty third location
        if model.num_locations < 3 or start in (0, 1):
            raise ScenarioPreconditionError("scenario precondition")
        if not 0 < queues[0] < queues[1]:
            raise ScenarioPreconditionError("scenario precondition")
        if queues[start] != 0:
            raise ScenarioPreconditionError("scenario precondition")
        if 0 in parked or 1 in parked:
            raise ScenarioPreconditionError("scenario precondition")
        if probs[0] != probs[1] or probs[0] >= 1.0:
            raise ScenarioPreconditionError("scenario precondition")


def _swap01(vec: tuple[int, ...]) -> tuple[int, ...]:
    return (vec[1], vec[0]) + vec[2:]


class _System:
    """One side of a paired run: state plus cumulative departures."""

    __slots__ = ("state", "dep_total")

    def __init__(self, state: SystemState) -> None:
        self.state = state
        self.dep_total = 0

    def advance(self, lead_action: RobotAction, arrivals) -> None:
        robots, queues = self.state
        joint = [lead_action]
        for loc in robots[1:]:
            joint.append(
                SERVE_ACTION if queues[loc] > 0 else IDLE_ACTION
            )
        self.state, delta = step(self.state, tuple(joint), arrivals)
        self.dep_total += sum(delta.departures)


def _serve_or_idle(state: SystemState) -> RobotAction:
    return (
        SERVE_ACTION if state.queues[state.robots[0]] > 0 else IDLE_ACTION
    )


def _tour_next(loc: int, num_locations: int, parked: frozenset) -> int:
    """Next location in cyclic order, skipping permanently parked robots."""
    j = (loc + 1) % num_locations
    while j in parked:
        j = (j + 1) % num_locations
    return j


def coupled_run(
    scenario: CouplingScenario, horizon: int, seed: int
) -> CouplingReport:
    """Run one paired experiment; see the module docstring for semantics."""
    validate_scenario(scenario)
    if horizon < 1:
        raise ValueError("horizon must be at least one slot")
    runner = {
        "prop1A": _run_prop1a,
        "prop1B": _run_prop1b,
        "prop2": _run_prop2,
        "prop4": _run_prop4,
    }[scenario.name]
    rng = np.random.default_rng(seed)
    return runner(scenario, horizon, seed, rng)


def _finish(
    scenario: CouplingScenario,
    seed: int,
    horizon: int,
    gap: list[int],
    tau: int | None,
    k: int | None,
    coupling_time: int | None,
) -> CouplingReport:
    beta = scenario.model.discount
    coupled = coupling_time is not None
    if coupled:
        terminal = gap[coupling_time]
        diff = sum(beta**t * gap[t] for t in range(coupling_time))
        diff += beta**coupling_time * terminal / (1.0 - beta)
    else:
        terminal = gap[-1]
        diff = sum(beta**t * g for t, g in enumerate(gap))
    return CouplingReport(
        scenario=scenario.name,
        seed=seed,
        horizon=horizon,
        discount=beta,
        initial_state=scenario.initial_state,
        gap=tuple(gap),
        tau=tau,
        k=k,
        coupling_time=coupling_time,
        coupled=coupled,
        terminal_gap=terminal,
        discounted_diff=diff,
    )


def _record_gap(gap: list[int], g: _System, pi: _System) -> None:
    gap.append(pi.dep_total - g.dep_total)
    backlog_diff = sum(g.state.queues) - sum(pi.state.queues)
    if backlog_diff != gap[-1]:
        raise RuntimeError(
            "conservation identity broken inside the coupling harness"
        )


def _run_prop1b(scenario, horizon, seed, rng) -> CouplingReport:
    """Idle versus serve at a nonempty queue; shared arrivals.

    G skips one service at slot 0 and serves thereafter; PI serves from the
    start.  G trails by exactly one departure until the first slot PI's
    queue is empty while G still works, which squares them up; states are
    equal from the next slot on.
    """
    probs = scenario.model.arrival_probs
    g = _System(scenario.initial_state)
    pi = _System(scenario.initial_state)
    gap = [0]
    tau = None
    coupling_time = None
    for t in range(horizon):
        g_act = IDLE_ACTION if t == 0 else _serve_or_idle(g.state)
        pi_act = _serve_or_idle(pi.state)
        arrivals = sample_arrivals(probs, rng)
        g.advance(g_act, arrivals)
        pi.advance(pi_act, arrivals)
        _record_gap(gap, g, pi)
        if g.state == pi.state:
            coupling_time = t + 1
            tau = t
            break
    return _finish(scenario, seed, horizon, gap, tau, None, coupling_time)


def _run_prop1a(scenario, horizon, seed, rng) -> CouplingReport:
    """Switch away from a nonempty queue versus serving it first.

    G leaves at slot 0 and then follows serve-if-nonempty, else move to the
    next free location in cyclic order.  PI serves at slot 0 and replays
    G's recorded moves one slot late, which is always admissible: the
    replayed serves happen away from the start location, where PI's queue
    leads G's by that location's latest arrival.  When G first returns to
    the start (slot tau), PI's replay is G's return switch; one slot later
    the two states meet and both sides follow the same feedback rule.
    """
    model = scenario.model
    probs = model.arrival_probs
    start = scenario.initial_state.robots[0]
    parked = frozenset(scenario.initial_state.robots[1:])
    g = _System(scenario.initial_state)
    pi = _System(scenario.initial_state)
    gap = [0]
    tau = None
    coupling_time = None
    g_history: list[RobotAction] = []

    def feedback(state: SystemState) -> RobotAction:
        loc = state.robots[0]
        if state.queues[loc] > 0:
            return SERVE_ACTION
        return switch_to(_tour_next(loc, model.num_locations, parked))

    for t in range(horizon):
        if tau is None and t >= 1 and g.state.robots[0] == start:
            tau = t
        if t == 0:
            g_act = switch_to(
                _tour_next(start, model.num_locations, parked)
            )
        else:
            g_act = feedback(g.state)
        if t == 0:
            pi_act = SERVE_ACTION
        elif tau is None or t <= tau:
            pi_act = g_history[t - 1]
        else:
            pi_act = feedback(pi.state)
        g_history.append(g_act)
        arrivals = sample_arrivals(probs, rng)
        g.advance(g_act, arrivals)
        pi.advance(pi_act, arrivals)
        _record_gap(gap, g, pi)
        if tau is not None and t == tau:
            if g.state != pi.state:
                raise RuntimeError(
                    "paired states failed to meet at the return slot"
                )
            coupling_time = t + 1
            break
    return _finish(scenario, seed, horizon, gap, tau, None, coupling_time)


def _run_prop2(scenario, horizon, seed, rng) -> CouplingReport:
    """Idle at an empty location versus switching to a nonempty one.

    PI consumes the draw with streams 0 and 1 swapped, so PI's robot at
    location 1 works the same coin flips G's robot sees at location 0, just
    with m2 extra tasks up front.  The departure gap climbs from 0 to m2,
    one unit on each slot G sits empty while PI still works, and freezes at
    m2 the first slot the two working queues agree.
    """
    probs = scenario.model.arrival_probs
    m2 = scenario.initial_state.queues[1]
    g = _System(scenario.initial_state)
    pi = _System(scenario.initial_state)
    gap = [0]
    coupling_time = None
    for t in range(horizon):
        g_act = IDLE_ACTION if t == 0 else _serve_or_idle(g.state)
        pi_act = switch_to(1) if t == 0 else _serve_or_idle(pi.state)
        arrivals = sample_arrivals(probs, rng)
        g.advance(g_act, arrivals)
        pi.advance(pi_act, _swap01(arrivals))
        _record_gap(gap, g, pi)
        if g.state.queues[0] == pi.state.queues[1]:
            coupling_time = t + 1
            break
    tau = coupling_time
    return _finish(scenario, seed, horizon, gap, tau, None, coupling_time)


def _run_prop4(scenario, horizon, seed, rng) -> CouplingReport:
    """Switch to the shorter of two nonempty queues versus the longer.

    G heads to the shorter queue (location 0), drains it, then crosses to
    the longer one.  PI, on the swapped draw, heads to the longer queue
    (location 1): its queue there tracks G's shorter queue plus
    k = x_1 - x_0, so PI drains in lockstep, spends the k slots G loses to
    its second move still serving, then crosses to location 0.  After PI's
    crossing the two systems are equal up to swapping the labels of
    locations 0 and 1, and the gap returns to zero having been 1 on exactly
    the k slots tau+1 .. tau+k.
    """
    model = scenario.model
    probs = model.arrival_probs
    queues0 = scenario.initial_state.queues
    k = queues0[1] - queues0[0]
    g = _System(scenario.initial_state)
    pi = _System(scenario.initial_state)
    gap = [0]
    tau = None
    catch_up_left = k
    coupling_time = None
    for t in range(horizon):
        # G side: travel, drain the short queue, cross, then park.
        g_loc = g.state.robots[0]
        if t == 0:
            g_act = switch_to(0)
        elif g_loc == 0:
            if g.state.queues[0] > 0:
                g_act = SERVE_ACTION
            else:
                if tau is not None:
                    raise RuntimeError(
                        "short queue emptied twice before the crossing"
                    )
                tau = t
                g_act = switch_to(1)
        else:
            g_act = _serve_or_idle(g.state)
        # PI side: travel, serve the long queue until tau, then exactly k
        # catch-up serves, then cross and park.
        if t == 0:
            pi_act = switch_to(1)
        elif tau is None or (t >= tau and catch_up_left > 0):
            if pi.state.queues[1] <= 0:
                raise RuntimeError("long queue ran dry before the crossing")
            pi_act = SERVE_ACTION
            if tau is not None:
                catch_up_left -= 1
        elif t == tau + k:
            pi_act = switch_to(0)
        else:
            pi_act = _serve_or_idle(pi.state)
        arrivals = sample_arrivals(probs, rng)
        g.advance(g_act, arrivals)
        pi.advance(pi_act, _swap01(arrivals))
        _record_gap(gap, g, pi)
        if tau is not None and t == tau + k:
            mirrored = SystemState(
                tuple(
                    _SWAP_LOC.get(loc, loc) for loc in pi.state.robots
                ),
                _swap01(pi.state.queues),
            )
            if mirrored != g.state:
                raise RuntimeError(
                    "paired states failed to meet after the crossing"
                )
            coupling_time = t + 1
            break
    return _finish(scenario, seed, horizon, gap, tau, k, coupling_time)


_SWAP_LOC = {0: 1, 1: 0}


def check_gap_pattern(report: CouplingReport) -> list[str]:
    """Compare a report's gap sequence against its scenario's exact shape.

    Returns human-readable problems; an empty list means the path matches.
    Runs that never coupled within their horizon are flagged rather than
    judged on the truncated pattern.
    """
    problems: list[str] = []
    if not report.coupled:
        return [f"{report.scenario}: run did not couple within the horizon"]
    gap = report.gap
    tau = report.tau
    tc = report.coupling_time
    if gap[0] != 0:
        problems.append("gap must start at 0")
    if report.scenario == "prop1B":
        for t in range(1, tau + 1):
            if gap[t] != 1:
                problems.append(f"slot {t}: expected gap 1, got {gap[t]}")
        if gap[tc] != 0:
            problems.append(f"slot {tc}: expected gap 0, got {gap[tc]}")
    elif report.scenario == "prop1A":
        if gap[1] != 1:
            problems.append(f"slot 1: expected gap 1, got {gap[1]}")
        for t in range(2, tau + 1):
            if not 0 <= gap[t] <= 1:
                problems.append(
                    f"slot {t}: expected gap in {{0,1}}, got {gap[t]}"
                )
        if gap[tc] != 0:
            problems.append(f"slot {tc}: expected gap 0, got {gap[tc]}")
    elif report.scenario == "prop2":
        m2 = report.initial_state.queues[1]
        for t in range(1, tc + 1):
            step_up = gap[t] - gap[t - 1]
            if step_up not in (0, 1):
                problems.append(
                    f"slot {t}: gap must climb by 0 or 1, got {step_up}"
                )
        if gap[tc] != m2 or report.terminal_gap != m2:
            problems.append(
                f"slot {tc}: expected terminal gap {m2}, got {gap[tc]}"
            )
    elif report.scenario == "prop4":
        x = report.initial_state.queues
        if report.k != x[1] - x[0]:
            problems.append("catch-up length disagrees with the start state")
        for t in range(1, tau + 1):
            if gap[t] != 0:
                problems.append(f"slot {t}: expected gap 0, got {gap[t]}")
        for t in range(tau + 1, tau + report.k + 1):
            if gap[t] != 1:
                problems.append(f"slot {t}: expected gap 1, got {gap[t]}")
        if gap[tc] != 0:
            problems.append(f"slot {tc}: expected gap 0, got {gap[tc]}")
    else:
        problems.append(f"unknown scenario {report.scenario!r}")
    return problems
