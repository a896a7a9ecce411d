"""Two-party price negotiation with scripted concession mechanics.

The buyer moves first; participants alternate. A deal is struck when one side
accepts the other's standing price or when offers cross. Each side is scored
on how close the deal price lands to its private target.
"""

from __future__ import annotations

import re
from typing import Any, Mapping

import numpy as np

from epo.core import Goal, Scenario, Source, Trajectory
from epo.envs.base import (
    NOTHING_HAPPENS,
    EnvError,
    EnvState,
    Environment,
    ProcessRewardLabel,
    StrategyVocabulary,
    load_asset,
    stable_seed,
)

BUYER, SELLER = "buyer", "seller"

_ASSET = load_asset("negotiation.json")
_MECH = _ASSET["mechanics"]

_OFFER_HEAD = re.compile(r"^\s*offer\s+\$?(\d[\d,]*(?:\.\d+)?)", re.I)
_OFFER_ANY = re.compile(r"\b(?:offer|propose|counter(?:-?offer)?)\b\D{0,40}?\$?(\d[\d,]*(?:\.\d+)?)", re.I)
_TAG = re.compile(r"#(\w+)")


def fmt_price(x: float) -> str:
    return str(int(round(x))) if abs(x - round(x)) < 1e-9 else f"{x:.2f}"


def parse_move(text: str) -> tuple[str, float | None, str | None] | None:
    """Parse a behavior into (verb, price, tag); None when unparsable."""
    head = text.strip().lower()
    tag_m = _TAG.search(text)
    tag = tag_m.group(1).lower() if tag_m else None
    if head.startswith("accept"):
        return "accept", None, tag
    if head.startswith("leave"):
        return "leave", None, tag
    m = _OFFER_HEAD.match(text)
    if m:
        return "offer", float(m.group(1).replace(",", "")), tag
    if re.search(r"\baccept", head):
        return "accept", None, tag
    if re.search(r"\b(leave|walk away)\b", head):
        return "leave", None, tag
    m = _OFFER_ANY.search(text)
    if m:
        return "offer", float(m.group(1).replace(",", "")), tag
    return None


def side_score(price: float, target: float, band: float) -> float:
    return 10.0 * min(max(1.0 - abs(price - target) / band, 0.0), 1.0)


class NegotiationEnv(Environment):
    env_id = "negotiation"
    score_range = tuple(_ASSET["score_range"])
    default_max_turns = _ASSET["max_turns"]
    vocabulary = StrategyVocabulary(tuple(_ASSET["vocabulary"]))
    two_party = True
    asset_version = _ASSET["version"]

    def make_scenario(self, split: str, seed: int, index: int) -> Scenario:
        gen = _ASSET["generation"]
        rng = np.random.default_rng(stable_seed(self.env_id, split, seed, index))
        item = _ASSET["items"][int(rng.integers(len(_ASSET["items"])))]
        list_price = round(item["base_price"] * rng.uniform(*gen["list_price_jitter"]) / 10) * 10
        gap = max(50, round(list_price * rng.uniform(*gen["gap_fraction_of_list"]) / 50) * 50)
        opening = list_price - gap
        u = rng.uniform(*gen["buyer_target_fraction"])
        v = rng.uniform(*gen["seller_target_fraction"])
        if split == "symmetric":
            v = 1.0 - u
        buyer_target = opening + round(u * gap / 10) * 10
        seller_target = opening + round(v * gap / 10) * 10
        band = max(10, round(gap * rng.uniform(*gen["band_fraction_of_gap"]) / 10) * 10)
        name = item["name"]
        return Scenario(
            scenario_id=self._scenario_id(split, seed, index),
            context=(
                f"A buyer and a seller negotiate over a {name}. The listing price is "
                f"${fmt_price(list_price)}; the buyer's opening offer is ${fmt_price(opening)}."
            ),
            goals=(
                Goal(
                    BUYER,
                    f"Purchase the {name} paying as close to ${fmt_price(buyer_target)} as you can.",
                    "negotiation.buyer",
                    {"target": float(buyer_target), "band": float(band)},
                ),
                Goal(
                    SELLER,
                    f"Sell the {name} for as near ${fmt_price(seller_target)} as possible.",
                    "negotiation.seller",
                    {"target": float(seller_target), "band": float(band)},
                ),
            ),
            env_id=self.env_id,
            max_turns=self.default_max_turns,
            params={"item": name, "list_price": float(list_price), "opening_offer": float(opening)},
        )

    # --- dynamics --------------------------------------------------------

    def _initial(self, scenario: Scenario) -> tuple[dict[str, Any], dict[str, str]]:
        p = scenario.params
        L, b0 = float(p["list_price"]), float(p["opening_offer"])
        data = {
            "item": p["item"],
            "prices": {BUYER: b0, SELLER: L},
            "gap0": L - b0,
            "last_tag": {BUYER: None, SELLER: None},
            "targets": {g.agent_id: float(g.params["target"]) for g in scenario.goals},
            "band": float(scenario.goals[0].params["band"]),
            "deal_price": None,
            "outcome": None,
            "history": [],
        }
        item = p["item"]
        first = {
            BUYER: f"{item} listed at asking price ${fmt_price(L)}. Your standing offer is ${fmt_price(b0)}.",
            SELLER: f"{item} listed at asking price ${fmt_price(L)}. The buyer's standing offer is ${fmt_price(b0)}.",
        }
        return data, first

    def _participants_of(self, data: Mapping[str, Any]) -> list[str]:
        return [BUYER, SELLER]

    def _source(self, receiver: str, mover: str) -> Source:
        return Source.PARTNER

    @staticmethod
    def partner(pid: str) -> str:
        return SELLER if pid == BUYER else BUYER

    def _apply(self, data: dict[str, Any], pid: str, behavior: str) -> tuple[dict[str, str], bool, bool]:
        if pid not in (BUYER, SELLER):
            raise EnvError(f"unknown participant {pid!r}")
        other = self.partner(pid)
        move = parse_move(behavior)
        data["history"].append([pid, behavior])
        if move is None:
            return {other: NOTHING_HAPPENS}, False, False
        verb, price, tag = move
        prices = data["prices"]
        if verb == "accept":
            data["deal_price"] = prices[other]
            data["outcome"] = "deal"
            return {}, True, True
        if verb == "leave":
            data["outcome"] = "walkaway"
            return {}, True, True
        data["last_tag"][pid] = tag
        price = max(0.0, price)
        prices[pid] = price
        crossed = price >= prices[SELLER] if pid == BUYER else price <= prices[BUYER]
        if crossed:
            data["deal_price"] = prices[other]
            data["outcome"] = "deal"
            return {}, True, True
        return {other: behavior.strip()}, False, True

    def _score(self, data: Mapping[str, Any], pid: str) -> float:
        if data["deal_price"] is None:
            return 0.0
        return side_score(data["deal_price"], data["targets"][pid], data["band"])

    @staticmethod
    def gap(data: Mapping[str, Any]) -> float:
        return data["prices"][SELLER] - data["prices"][BUYER]

    # --- hooks -----------------------------------------------------------

    def observation_key(self, content: str) -> str:
        text = content.strip()
        if text == NOTHING_HAPPENS:
            return "nothing"
        if "listed at asking price" in text:
            return "start"
        move = parse_move(text)
        if move is None:
            return "other"
        verb, _, tag = move
        return verb if verb != "offer" else f"offer:{tag or 'free'}"

    def scripted_behavior(
        self, token: str | None, state: EnvState, participant_id: str, goal_params: Mapping[str, Any]
    ) -> str:
        data = state.data
        pid, other = participant_id, self.partner(participant_id)
        own, theirs = data["prices"][pid], data["prices"][other]
        gap0 = data["gap0"]
        toward = 1.0 if pid == BUYER else -1.0
        mult = _MECH["persuasion_multiplier"].get(data["last_tag"][other] or "", 1.0)
        if token is None:
            token = "concede_small"

        def offer(price: float, tag: str) -> str:
            return f"offer {fmt_price(round(price, 2))} #{tag}"

        if token in ("concede_small", "concede_large"):
            new = own + toward * _MECH[token] * gap0 * mult
            if toward * (new - theirs) >= 0:
                new = theirs
            return offer(new, "concede")
        if token == "open_high":
            return offer(max(0.0, own - toward * _MECH["anchor_step"] * gap0), "anchor")
        if token == "hold_firm":
            return offer(own, "firm")
        if token == "create_urgency":
            return offer(own, "urgency")
        if token == "value_claim":
            return offer(own, "value")
        target = float(goal_params.get("target", data["targets"][pid]))
        if token == "accept":
            # the actor declines deals that would leave it under the acceptance floor
            band = float(goal_params.get("band", data["band"]))
            if side_score(theirs, target, band) < _MECH["accept_floor"]:
                return offer(own, "firm")
            return "accept"
        if token == "leave":
            if abs(theirs - target) <= _MECH["leave_override_fraction"] * target:
                return "accept"
            return "leave"
        # unknown token: the actor ignores it and restates its position
        return offer(own, "firm")

    def oracle_label(self, trajectory: Trajectory, scenario: Scenario) -> ProcessRewardLabel:
        self._check_terminal(trajectory)
        pid = trajectory.participant_id
        other = self.partner(pid)
        state, _ = self.reset(scenario)
        gap0 = state.data["gap0"]
        threshold = _MECH["critical_gap_fraction"] * gap0
        critical, j = [], 0
        for turn in trajectory.turns:
            if turn.observation.source is Source.PARTNER:
                state = self.step(state, other, turn.observation.content).state
            before = self.gap(state.data)
            state = self.step(state, pid, turn.behavior.content).state
            if turn.strategy is None:
                continue
            j += 1
            struck = state.data["outcome"] == "deal" and state.data["history"][-1][0] == pid
            if struck or before - self.gap(state.data) >= threshold - 1e-9:
                critical.append(j)
        reason = f"turns {critical} closed the gap by >= {fmt_price(threshold)} or struck the deal"
        return ProcessRewardLabel(tuple(critical), reason)
