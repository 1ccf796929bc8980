"""Simulator: determinism, frame accounting, capacities, observability."""

import copy
import random

import pytest

from beliefworld import world_sim
from beliefworld.actions import CONTINUE, ExploreCurrent, GoGrasp, GoTo, Put, SendMessage, Transport
from beliefworld.scenario import EntityRegistry, ScenarioError, load_scenario, scenario_from_dict
from beliefworld.sbl import ObjectRef


def tiny_scenario(reveal=0.5, **overrides):
    data = {
        "name": "tiny",
        "rooms": [
            {"name": "kitchen", "id": 2000},
            {"name": "office", "id": 3000},
            {"name": "bedroom", "id": 4000},
        ],
        "edges": [[2000, 3000, 100], [3000, 4000, 100]],
        "bed": {"name": "bed", "id": 9000, "room": 4000},
        "objects": [
            {"name": "apple", "id": 1, "kind": "target", "room": 2000},
            {"name": "pen", "id": 2, "kind": "target", "room": 3000},
            {"name": "banana", "id": 3, "kind": "target", "room": 2000},
            {"name": "orange", "id": 4, "kind": "target", "room": 2000},
            {"name": "bread", "id": 5, "kind": "target", "room": 2000},
            {"name": "bowl", "id": 9, "kind": "container", "room": 2000},
        ],
        "agents": [
            {"name": "Alice", "room": 2000},
            {"name": "Bob", "room": 2000},
        ],
        "frame_budget": 3000,
        "reveal_fraction": reveal,
    }
    data.update(overrides)
    return scenario_from_dict(data)


def run_until_idle(state, agent, action):
    """Submit an action and apply frames until that agent completes it."""
    _, results = world_sim.apply(state, {agent: action})
    result = results[agent]
    while result.status == "in_progress":
        _, results = world_sim.apply(state, {})
        result = results[agent]
    return result


KITCHEN = ObjectRef("kitchen", 2000)
OFFICE = ObjectRef("office", 3000)
BEDROOM = ObjectRef("bedroom", 4000)
APPLE = ObjectRef("apple", 1)
PEN = ObjectRef("pen", 2)
BANANA = ObjectRef("banana", 3)
ORANGE = ObjectRef("orange", 4)
BREAD = ObjectRef("bread", 5)
BOWL = ObjectRef("bowl", 9)


def test_init_deterministic():
    scn = load_scenario("food_small")
    a = world_sim.init(scn, 42)
    b = world_sim.init(scn, 42)
    assert a.locations == b.locations
    assert a.revealed == b.revealed
    assert a.explored == b.explored
    assert a.frame == 0
    assert len(a.locations) == 12  # 10 targets + 2 containers placed


def test_init_validation_rejects_disconnected_graph():
    with pytest.raises(ScenarioError, match="not connected"):
        tiny_scenario(edges=[[2000, 3000, 100]])


def test_scenario_validation_collects_violations():
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict({"rooms": [], "objects": [], "agents": []})
    text = str(err.value)
    assert "room" in text and "target" in text and "two agents" in text


def test_goto_costs_edge_distance_frames():
    state = world_sim.init(tiny_scenario(), 1)
    start = state.frame
    result = run_until_idle(state, "Alice", GoTo(OFFICE))
    assert result.status == "completed"
    assert state.frame - start == 100
    assert state.agent("Alice").room_id == 3000


def test_goto_multi_hop_path_cost():
    state = world_sim.init(tiny_scenario(), 1)
    start = state.frame
    result = run_until_idle(state, "Alice", GoTo(BEDROOM))
    assert result.status == "completed"
    assert state.frame - start == 200


def test_explore_reveals_all_and_costs_50():
    state = world_sim.init(tiny_scenario(reveal=0.0), 1)
    start = state.frame
    result = run_until_idle(state, "Alice", ExploreCurrent(KITCHEN))
    assert result.status == "completed"
    assert state.frame - start == 50
    assert state.exploration_of("Alice", 2000) == "all"
    obs = world_sim.observe(state, "Alice")
    assert {ref.id for ref, _ in obs.items} == {1, 3, 4, 5, 9}


def test_entry_reveal_zero_fraction_sets_part():
    state = world_sim.init(tiny_scenario(reveal=0.0), 1)
    obs = world_sim.observe(state, "Alice")
    assert obs.exploration == "part"
    assert obs.items == ()


def test_entry_reveal_full_fraction():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    obs = world_sim.observe(state, "Alice")
    assert {ref.id for ref, _ in obs.items} == {1, 3, 4, 5, 9}


def test_entry_reveal_seeded_replay():
    scn = tiny_scenario(reveal=0.5)
    sets = {frozenset(world_sim.init(scn, 7).revealed["Alice"]) for _ in range(3)}
    assert len(sets) == 1


def test_grasp_and_capacity_limits():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    assert run_until_idle(state, "Alice", GoGrasp(APPLE)).status == "completed"
    assert run_until_idle(state, "Alice", GoGrasp(BANANA)).status == "completed"
    _, results = world_sim.apply(state, {"Alice": GoGrasp(ORANGE)})
    assert results["Alice"].status == "rejected"
    assert "full" in results["Alice"].detail


def test_put_and_container_capacity():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    run_until_idle(state, "Alice", GoGrasp(BOWL))
    for item in (APPLE, BANANA, ORANGE):
        run_until_idle(state, "Alice", GoGrasp(item))
        result = run_until_idle(state, "Alice", Put(item, BOWL))
        assert result.status == "completed"
    run_until_idle(state, "Alice", GoGrasp(BREAD))
    _, results = world_sim.apply(state, {"Alice": Put(BREAD, BOWL)})
    assert results["Alice"].status == "rejected"
    assert "full" in results["Alice"].detail


def test_transport_four_items_container_lost():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    run_until_idle(state, "Alice", GoGrasp(BOWL))
    for item in (APPLE, BANANA, ORANGE):
        run_until_idle(state, "Alice", GoGrasp(item))
        run_until_idle(state, "Alice", Put(item, BOWL))
    run_until_idle(state, "Alice", GoGrasp(BREAD))
    start = state.frame
    result = run_until_idle(state, "Alice", Transport())
    assert result.status == "completed"
    assert state.frame - start == 200 + 20  # path to goal room + drop
    assert state.transported_ids() == [1, 3, 4, 5]
    assert 9 in state.lost_containers
    # the lost container can never be grasped again
    _, results = world_sim.apply(state, {"Alice": GoGrasp(BOWL)})
    assert results["Alice"].status == "rejected"


def test_send_message_costs_one_frame_and_delivers_next_tick():
    state = world_sim.init(tiny_scenario(), 1)
    start = state.frame
    _, results = world_sim.apply(state, {"Alice": SendMessage("hello")})
    assert results["Alice"].status == "completed"
    assert state.frame - start == 1
    assert world_sim.drain_inbox(state, "Bob") == [("Alice", "hello")]
    assert world_sim.drain_inbox(state, "Bob") == []
    assert world_sim.drain_inbox(state, "Alice") == []


def test_busy_agent_must_continue():
    state = world_sim.init(tiny_scenario(), 1)
    world_sim.apply(state, {"Alice": GoTo(OFFICE)})
    _, results = world_sim.apply(state, {"Alice": GoTo(BEDROOM)})
    assert results["Alice"].status == "rejected"
    assert "busy" in results["Alice"].detail
    _, results = world_sim.apply(state, {"Alice": CONTINUE})
    assert results["Alice"].status == "in_progress"


def test_grasp_race_lower_index_wins():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    _, results = world_sim.apply(state, {"Alice": GoGrasp(APPLE), "Bob": GoGrasp(APPLE)})
    assert results["Alice"].status == "in_progress"
    for _ in range(19):
        _, results = world_sim.apply(state, {})
    assert results["Alice"].status == "completed"
    assert results["Bob"].status == "rejected"
    assert state.locations[1] == ("held", "Alice")
    assert state.agent("Bob").hands == []


def test_frame_advances_exactly_one_per_apply():
    state = world_sim.init(tiny_scenario(), 1)
    for expected in range(1, 30):
        world_sim.apply(state, {})
        assert state.frame == expected


def test_is_done_boundaries():
    scn = tiny_scenario(frame_budget=10)
    state = world_sim.init(scn, 1)
    done, _ = world_sim.is_done(state)
    assert not done
    for _ in range(9):
        world_sim.apply(state, {})
    assert world_sim.is_done(state) == (False, "")
    world_sim.apply(state, {})
    assert world_sim.is_done(state) == (True, "timeout")


def test_is_done_complete():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    for agent, items in (("Alice", (APPLE, BANANA)), ("Bob", (ORANGE, BREAD))):
        for item in items:
            run_until_idle(state, agent, GoGrasp(item))
        run_until_idle(state, agent, Transport())
    run_until_idle(state, "Alice", GoTo(OFFICE))
    run_until_idle(state, "Alice", GoGrasp(PEN))
    run_until_idle(state, "Alice", Transport())
    done, reason = world_sim.is_done(state)
    assert done and reason == "complete"


def test_observation_invariant_to_unrevealed_items_elsewhere():
    # Moving a never-revealed object between the *other* rooms must not
    # change what an agent observes where it stands.
    from dataclasses import replace

    base = tiny_scenario(reveal=0.0)
    objects = list(base.objects)
    objects[1] = (PEN, "target", 4000)  # pen moves office -> goal room
    swapped = replace(base, objects=tuple(objects))
    a = world_sim.init(base, 3)
    b = world_sim.init(swapped, 3)
    assert world_sim.observe(a, "Alice") == world_sim.observe(b, "Alice")


def test_colocated_hands_visible():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    run_until_idle(state, "Bob", GoGrasp(BANANA))
    obs = world_sim.observe(state, "Alice")
    assert obs.colocated == (("Bob", ((BANANA, "target"),)),)


def test_at_bed_pile_visible_in_goal_room():
    state = world_sim.init(tiny_scenario(reveal=1.0), 1)
    run_until_idle(state, "Alice", GoGrasp(APPLE))
    run_until_idle(state, "Alice", Transport())
    obs = world_sim.observe(state, "Alice")
    assert obs.at_bed == (APPLE,)
    assert (ObjectRef("bed", 9000), "bed") in obs.items


def test_trajectory_determinism_bitwise():
    scn = load_scenario("food_small")
    def trajectory(seed):
        state = world_sim.init(scn, seed)
        rng = random.Random(seed)
        snapshot = []
        for _ in range(300):
            intents = {}
            for agent in state.agents:
                if agent.busy is None:
                    options = world_sim.legal_intents(state, agent.name)
                    if options:
                        intents[agent.name] = rng.choice(options)
            world_sim.apply(state, intents)
            snapshot.append((state.frame, tuple(sorted(state.locations.items()))))
        return snapshot
    assert trajectory(11) == trajectory(11)


def test_conservation_fuzz():
    scn = load_scenario("food_small")
    rng = random.Random(999)
    applies = 0
    while applies < 2000:
        state = world_sim.init(scn, rng.randint(0, 10**6))
        for _ in range(400):
            intents = {}
            for agent in state.agents:
                if agent.busy is None and rng.random() < 0.8:
                    options = world_sim.legal_intents(state, agent.name)
                    if options:
                        intents[agent.name] = rng.choice(options)
            world_sim.apply(state, intents)  # invariants checked inside
            applies += 1
            done, _ = world_sim.is_done(state)
            if done:
                break
