"""Text household with four rooms and six task templates.

Receptacles are reached with ``go to``; closed ones must be opened before
their contents are visible. Invalid commands yield "Nothing happens.". The
episode ends as soon as the task predicate holds (reward 1.0) or at the cap.
"""

from __future__ import annotations

import re
from typing import Any, Mapping

import numpy as np

from epo.core import Goal, Scenario, Trajectory
from epo.envs.base import (
    NOTHING_HAPPENS,
    EnvState,
    Environment,
    ProcessRewardLabel,
    StrategyVocabulary,
    load_asset,
    stable_seed,
)

AGENT = "agent"
_ASSET = load_asset("household.json")
ROOMS: dict[str, list[str]] = _ASSET["rooms"]
RECEPTACLES: list[str] = [r for rs in ROOMS.values() for r in rs]
CLOSED = frozenset(_ASSET["closed"])
APPLIANCES: dict[str, str] = _ASSET["appliances"]
TEMPLATES: dict[str, dict[str, Any]] = _ASSET["templates"]
TREATED = {"clean": "clean", "heat": "hot", "cool": "cool"}
LAMP = APPLIANCES["light"]


def _all_pairs() -> set[tuple[str, str]]:
    return {(o, t) for spec in TEMPLATES.values() for o in spec["objects"] for t in spec["targets"]}


UNSEEN_PAIRS = frozenset(tuple(p) for p in _ASSET["unseen_pairs"])
SEEN_PAIRS = frozenset(_all_pairs() - UNSEEN_PAIRS)


def task_pool(split: str) -> list[tuple[str, str, str]]:
    """(template, object, target) triples allowed in a split; 'unseen' only uses held-out pairs."""
    allowed = UNSEEN_PAIRS if split == "unseen" else SEEN_PAIRS
    return sorted(
        (name, o, t)
        for name, spec in TEMPLATES.items()
        for o in spec["objects"]
        for t in spec["targets"]
        if (o, t) in allowed
    )


def obj_type(name: str) -> str:
    return name.rsplit(" ", 1)[0]


def _article_list(objs: list[str]) -> str:
    return ", ".join(f"a {o}" for o in objs) if objs else "nothing"


class HouseholdEnv(Environment):
    env_id = "household"
    score_range = tuple(_ASSET["score_range"])
    default_max_turns = _ASSET["max_turns"]
    vocabulary = StrategyVocabulary(tuple(_ASSET["vocabulary"]))
    asset_version = _ASSET["version"]

    def make_scenario(self, split: str, seed: int, index: int) -> Scenario:
        rng = np.random.default_rng(stable_seed(self.env_id, split, seed, index))
        pool = task_pool(split)
        template, obj, target = pool[int(rng.integers(len(pool)))]
        return self.scenario_for(self._scenario_id(split, seed, index), template, obj, target, rng)

    def scenario_for(
        self, scenario_id: str, template: str, obj: str, target: str, rng: np.random.Generator | None = None
    ) -> Scenario:
        rng = rng or np.random.default_rng(stable_seed(scenario_id))
        contents: dict[str, list[str]] = {r: [] for r in RECEPTACLES}
        counts: dict[str, int] = {}

        def place(kind: str, exclude: str | None) -> None:
            spots = [s for s in _ASSET["objects"][kind] if s != exclude]
            counts[kind] = counts.get(kind, 0) + 1
            contents[spots[int(rng.integers(len(spots)))]].append(f"{kind} {counts[kind]}")

        for _ in range(2 if template == "pick_two_obj_and_place" else 1):
            place(obj, target)
        kinds = sorted(k for k in _ASSET["objects"] if k != obj)
        for i in rng.choice(len(kinds), size=_ASSET["distractors"], replace=False):
            place(kinds[int(i)], None)
        for objs in contents.values():
            objs.sort()
        task = TEMPLATES[template]["text"].format(obj=obj, target=target)
        rooms = "; ".join(f"{room}: {', '.join(rs)}" for room, rs in ROOMS.items())
        return Scenario(
            scenario_id=scenario_id,
            context=f"You are in the middle of a house. Rooms and receptacles: {rooms}.",
            goals=(
                Goal(AGENT, f"Your task is to: {task}.", f"household.{template}",
                     {"template": template, "object": obj, "target": target}),
            ),
            env_id=self.env_id,
            max_turns=self.default_max_turns,
            params={"contents": contents},
        )

    def _participants_of(self, data: Mapping[str, Any]) -> list[str]:
        return [AGENT]

    def _initial(self, scenario: Scenario) -> tuple[dict[str, Any], dict[str, str]]:
        g = scenario.goals[0].params
        data = {
            "template": g["template"],
            "object": g["object"],
            "target": g["target"],
            "contents": {k: list(v) for k, v in scenario.params["contents"].items()},
            "location": None,
            "holding": None,
            "opened": [],
            "states": {},
            "lamp_on": False,
            "visited": [],
            "achieved": [],
        }
        first = f"You are in the middle of a house. {scenario.goals[0].description}"
        return data, {AGENT: first}

    # --- world helpers ---------------------------------------------------

    @staticmethod
    def _accessible(data: Mapping[str, Any], recep: str) -> bool:
        return recep not in CLOSED or recep in data["opened"]

    def _qualifies(self, data: Mapping[str, Any], name: str | None) -> bool:
        """Object counts toward the task (right type and, if required, treated)."""
        if name is None or obj_type(name) != data["object"]:
            return False
        treatment = TEMPLATES[data["template"]].get("treatment")
        return treatment is None or TREATED[treatment] in data["states"].get(name, [])

    def goal_satisfied(self, data: Mapping[str, Any]) -> bool:
        if data["template"] == "look_at_obj_in_light":
            return self._qualifies(data, data["holding"]) and data["lamp_on"] and data["location"] == LAMP
        placed = sum(1 for o in data["contents"][data["target"]] if self._qualifies(data, o))
        return placed >= (2 if data["template"] == "pick_two_obj_and_place" else 1)

    def subgoals(self, data: Mapping[str, Any]) -> set[str]:
        """Subgoal predicates that currently hold."""
        out = set()
        loc, held, kind = data["location"], data["holding"], data["object"]
        if loc is not None and self._accessible(data, loc) and loc != data["target"]:
            if any(obj_type(o) == kind for o in data["contents"][loc]):
                out.add("located")
        if held is not None and obj_type(held) == kind:
            out.add("holding")
            treatment = TEMPLATES[data["template"]].get("treatment")
            if treatment and self._qualifies(data, held):
                out.add("treated")
            if self._qualifies(data, held) and loc == data["target"]:
                out.add("at_target")
        placed = sum(1 for o in data["contents"][data["target"]] if self._qualifies(data, o))
        if data["template"] == "pick_two_obj_and_place" and placed >= 1:
            out.add("placed_one")
        if data["template"] == "look_at_obj_in_light" and data["lamp_on"] and loc == LAMP:
            out.add("lamp_on")
        if self.goal_satisfied(data):
            out.add("done")
        return out

    def _describe(self, data: Mapping[str, Any], recep: str) -> str:
        if not self._accessible(data, recep):
            return f"The {recep} is closed."
        prep = "In" if recep in CLOSED else "On"
        return f"{prep} the {recep}, you see {_article_list(data['contents'][recep])}."

    # --- dynamics --------------------------------------------------------

    def _apply(self, data: dict[str, Any], pid: str, behavior: str) -> tuple[dict[str, str], bool, bool]:
        text = self._execute(data, behavior.strip().lower().rstrip("."))
        valid = text is not None
        if text is None:
            text = NOTHING_HAPPENS
        for name in sorted(self.subgoals(data)):
            if name not in data["achieved"]:
                data["achieved"].append(name)
        done = self.goal_satisfied(data)
        return ({} if done else {AGENT: text}), done, valid

    def _execute(self, data: dict[str, Any], cmd: str) -> str | None:
        loc, held = data["location"], data["holding"]
        if cmd in ("look", "look around"):
            where = f"You are at {loc}. " + self._describe(data, loc) if loc else "You are in the middle of a house."
            return where
        if cmd == "inventory":
            return f"You are carrying: {'a ' + held if held else 'nothing'}."
        m = re.fullmatch(r"go to (.+)", cmd)
        if m:
            recep = m.group(1).strip()
            if recep not in RECEPTACLES:
                return None
            data["location"] = recep
            if recep not in data["visited"]:
                data["visited"].append(recep)
            return f"You arrive at {recep}. " + self._describe(data, recep)
        m = re.fullmatch(r"(open|close) (.+)", cmd)
        if m:
            verb, recep = m.groups()
            if recep != loc or recep not in CLOSED:
                return None
            if verb == "open":
                if recep in data["opened"]:
                    return None
                data["opened"].append(recep)
                return f"You open the {recep}. The {recep} is open. " + self._describe(data, recep)
            if recep not in data["opened"]:
                return None
            data["opened"].remove(recep)
            return f"You close the {recep}."
        m = re.fullmatch(r"take (.+) from (.+)", cmd)
        if m:
            obj, recep = m.groups()
            if recep != loc or held is not None or not self._accessible(data, recep):
                return None
            if obj not in data["contents"][recep]:
                return None
            data["contents"][recep].remove(obj)
            data["holding"] = obj
            return f"You pick up the {obj} from the {recep}."
        m = re.fullmatch(r"put (.+) (?:in/on|in|on) (.+)", cmd)
        if m:
            obj, recep = m.groups()
            if recep != loc or held != obj or not self._accessible(data, recep):
                return None
            data["contents"][recep].append(obj)
            data["contents"][recep].sort()
            data["holding"] = None
            return f"You put the {obj} in/on the {recep}."
        m = re.fullmatch(r"(clean|heat|cool) (.+) with (.+)", cmd)
        if m:
            verb, obj, recep = m.groups()
            if recep != loc or held != obj:
                return None
            ok = {"clean": recep.startswith("sinkbasin"), "heat": recep == APPLIANCES["heat"], "cool": recep == APPLIANCES["cool"]}
            if not ok[verb]:
                return None
            states = data["states"].setdefault(obj, [])
            if TREATED[verb] not in states:
                states.append(TREATED[verb])
            return f"You {verb} the {obj} using the {recep}."
        m = re.fullmatch(r"(?:toggle|use) (?:(.+) )?(desklamp 1)", cmd)
        if m:
            if loc != LAMP:
                return None
            data["lamp_on"] = not data["lamp_on"]
            return f"You turn {'on' if data['lamp_on'] else 'off'} the {LAMP}."
        return None

    def _score(self, data: Mapping[str, Any], pid: str) -> float:
        return 1.0 if self.goal_satisfied(data) else 0.0

    # --- hooks -----------------------------------------------------------

    def observation_key(self, content: str) -> str:
        c = content.strip()
        if c == NOTHING_HAPPENS:
            return "nothing"
        if c.startswith("You are in the middle"):
            return "start"
        if c.startswith("You arrive at"):
            return "arrive:closed" if c.endswith("is closed.") else "arrive"
        for prefix, key in (("You open", "open"), ("You close", "close"), ("You pick up", "take"),
                            ("You put", "put"), ("You turn", "toggle"), ("You are at", "look"),
                            ("You are carrying", "inventory")):
            if c.startswith(prefix):
                return key
        if re.match(r"You (clean|heat|cool)", c):
            return "treat"
        return "other"

    def scripted_behavior(
        self, token: str | None, state: EnvState, participant_id: str, goal_params: Mapping[str, Any]
    ) -> str:
        data = state.data
        loc, held = data["location"], data["holding"]
        kind, target = data["object"], data["target"]
        here = [] if loc is None or not self._accessible(data, loc) else data["contents"][loc]
        visible = [o for o in here if obj_type(o) == kind]
        if loc == target:
            visible = [o for o in visible if not self._qualifies(data, o)]
        treatment = TEMPLATES[data["template"]].get("treatment")
        goal_recep = LAMP if data["template"] == "look_at_obj_in_light" else target

        def explore() -> str:
            order = [r for r in RECEPTACLES if r not in data["visited"]] or RECEPTACLES
            nxt = order[0] if order[0] != loc or len(order) == 1 else order[1]
            return f"go to {nxt}"

        if token is None:
            # without guidance the actor only fetches and delivers
            if held is not None and obj_type(held) == kind:
                if loc != goal_recep:
                    return f"go to {goal_recep}"
                if not self._accessible(data, loc):
                    return f"open {loc}"
                return f"put {held} in/on {loc}"
            if visible and held is None:
                return f"take {visible[0]} from {loc}"
            return explore()
        if token == "explore":
            return explore()
        if token == "open_receptacle":
            return f"open {loc}" if loc else "open door"
        if token == "take_object":
            if visible and held is None:
                return f"take {visible[0]} from {loc}"
            return f"take {kind} from {loc or 'floor'}"
        if token == "treat_object":
            if treatment is None or held is None:
                return "look"
            appliance = APPLIANCES[treatment]
            if loc != appliance:
                return f"go to {appliance}"
            return f"{treatment} {held} with {appliance}"
        if token == "go_to_target":
            return f"go to {goal_recep}"
        if token == "place_object":
            return f"put {held} in/on {loc}" if held and loc else "put nothing"
        if token == "use_lamp":
            return f"toggle {LAMP}" if loc == LAMP else f"go to {LAMP}"
        return "look"

    def oracle_label(self, trajectory: Trajectory, scenario: Scenario) -> ProcessRewardLabel:
        self._check_terminal(trajectory)
        state, _ = self.reset(scenario)
        critical, j = [], 0
        for turn in trajectory.turns:
            before = len(state.data["achieved"])
            state = self.step(state, trajectory.participant_id, turn.behavior.content).state
            if turn.strategy is None:
                continue
            j += 1
            if len(state.data["achieved"]) > before:
                critical.append(j)
        return ProcessRewardLabel(tuple(critical), f"turns {critical} completed a subgoal")
