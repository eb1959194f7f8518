"""Shared test helpers: random state and action generation for fuzz tests."""

import random

from hypothesis import strategies as st

from eslsim import IDLE_ACTION, SERVE_ACTION, SystemState, switch_to


def random_state(
    rng: random.Random, num_locations: int, num_robots: int, max_queue: int = 6
) -> SystemState:
    robots = tuple(rng.sample(range(num_locations), num_robots))
    queues = tuple(rng.randint(0, max_queue) for _ in range(num_locations))
    return SystemState(robots, queues)


def random_feasible_joint(rng: random.Random, state: SystemState):
    """Draw distinct end locations, one per robot; a robot already at its
    endpoint serves when it can and idles otherwise, the rest switch."""
    robots, queues = state
    ends = rng.sample(range(len(queues)), len(robots))
    joint = []
    for loc, end in zip(robots, ends):
        if end == loc:
            joint.append(SERVE_ACTION if queues[loc] > 0 else IDLE_ACTION)
        else:
            joint.append(switch_to(end))
    return tuple(joint)


@st.composite
def system_states(draw, max_locations: int = 4, max_queue: int = 5):
    n = draw(st.integers(min_value=2, max_value=max_locations))
    m = draw(st.integers(min_value=1, max_value=n))
    robots = tuple(draw(st.permutations(range(n)))[:m])
    queues = tuple(
        draw(st.lists(st.integers(0, max_queue), min_size=n, max_size=n))
    )
    return SystemState(robots, queues)
