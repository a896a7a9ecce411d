"""Single-agent shopping over a fixed 32-item catalog.

Actions follow the ``search[...]`` / ``click[...]`` grammar. Buying ends the
episode; the reward is the fraction of required attributes the purchased item
has, halved when it breaks the price cap.
"""

from __future__ import annotations

import math
import re
from functools import lru_cache
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
_ASSET = load_asset("shop_catalog.json")
CATALOG: dict[str, dict[str, Any]] = {item["id"]: item for item in _ASSET["items"]}

_SEARCH = re.compile(r"^\s*search\s*\[(.*)\]\s*$", re.I | re.S)
_CLICK = re.compile(r"^\s*click\s*\[(.*)\]\s*$", re.I | re.S)


def item_terms(item: Mapping[str, Any]) -> list[str]:
    return [item["category"], *item["attributes"]]


@lru_cache(maxsize=4096)
def _term_pattern(term: str) -> re.Pattern:
    return re.compile(r"(?<![\w-])" + re.escape(term) + r"(?![\w-])")


def search(query: str) -> list[str]:
    """Item ids ranked by matched terms (desc), then price, then id; non-matches dropped."""
    q = query.lower()
    scored = []
    for item in CATALOG.values():
        hits = sum(1 for t in item_terms(item) if _term_pattern(t).search(q))
        if hits:
            scored.append((-hits, item["price"], item["id"]))
    return [iid for _, _, iid in sorted(scored)]


def match_count(item_id: str, required: list[str]) -> int:
    terms = set(item_terms(CATALOG[item_id]))
    return sum(1 for r in required if r in terms)


def purchase_reward(item_id: str, required: list[str], price_cap: float) -> float:
    frac = match_count(item_id, required) / len(required)
    return frac * (1.0 if CATALOG[item_id]["price"] <= price_cap else 0.5)


def _results_text(query: str, ids: list[str]) -> str:
    if not ids:
        return f"[Results for '{query}'] no matching products. [back to search]"
    shown = " | ".join(f"[{i}] {CATALOG[i]['title']} ${CATALOG[i]['price']:.2f}" for i in ids)
    return f"[Results for '{query}'] {shown} | [back to search]"


def _item_text(iid: str) -> str:
    item = CATALOG[iid]
    return (
        f"[Item {iid}] {item['title']} | category: {item['category']} | attributes: "
        f"{', '.join(item['attributes'])} | price ${item['price']:.2f} | [buy now] [back to search]"
    )


class ShopEnv(Environment):
    env_id = "shop"
    score_range = tuple(_ASSET["score_range"])
    default_max_turns = _ASSET["max_turns"]
    vocabulary = StrategyVocabulary(tuple(_ASSET["vocabulary"]))
    asset_version = _ASSET["version"]
    page_size = _ASSET["results_per_page"]

    def make_scenario(self, split: str, seed: int, index: int) -> Scenario:
        rng = np.random.default_rng(stable_seed(self.env_id, split, seed, index))
        ids = sorted(CATALOG)
        item = CATALOG[ids[int(rng.integers(len(ids)))]]
        picked = sorted(rng.choice(len(item["attributes"]), size=2, replace=False).tolist())
        required = [item["category"], *(item["attributes"][i] for i in picked)]
        top = search(", ".join(required))[0]
        price_cap = math.ceil(CATALOG[top]["price"] * rng.uniform(1.05, 1.5))
        return self.scenario_for(self._scenario_id(split, seed, index), required, float(price_cap))

    def scenario_for(self, scenario_id: str, required: list[str], price_cap: float) -> Scenario:
        category, *attrs = required
        desc = f"Find a {category} that is {' and '.join(attrs)}, priced at most ${price_cap:.2f}."
        return Scenario(
            scenario_id=scenario_id,
            context="An online store with a search page, result lists and item pages.",
            goals=(Goal(AGENT, desc, "shop.attributes", {"required": list(required), "price_cap": price_cap}),),
            env_id=self.env_id,
            max_turns=self.default_max_turns,
            params={"required": list(required), "price_cap": price_cap},
        )

    def _participants_of(self, data: Mapping[str, Any]) -> list[str]:
        return [AGENT]

    def _initial(self, scenario: Scenario) -> tuple[dict[str, Any], dict[str, str]]:
        data = {
            "required": list(scenario.params["required"]),
            "price_cap": float(scenario.params["price_cap"]),
            "page": "search",
            "query": None,
            "results": [],
            "current": None,
            "viewed": [],
            "best_match": 0,
            "purchased": None,
        }
        return data, {AGENT: "[Search page] Use search[keywords] to look for products."}

    def _apply(self, data: dict[str, Any], pid: str, behavior: str) -> tuple[dict[str, str], bool, bool]:
        nothing = ({AGENT: NOTHING_HAPPENS}, False, False)
        m = _SEARCH.match(behavior)
        if m:
            query = m.group(1).strip()
            if not query:
                return nothing
            data.update(page="results", query=query, results=search(query)[: self.page_size], current=None)
            return {AGENT: _results_text(query, data["results"])}, False, True
        m = _CLICK.match(behavior)
        if not m:
            return nothing
        target = m.group(1).strip()
        low = target.lower()
        if low in ("buy now", "buy"):
            if data["page"] != "item":
                return nothing
            data["purchased"] = data["current"]
            return {}, True, True
        if low in ("back to search", "back"):
            if data["page"] == "item" and data["query"] is not None:
                data.update(page="results", current=None)
                return {AGENT: _results_text(data["query"], data["results"])}, False, True
            if data["page"] == "results":
                data.update(page="search", current=None)
                return {AGENT: "[Search page] Use search[keywords] to look for products."}, False, True
            return nothing
        iid = target.upper()
        if data["page"] != "results" or iid not in data["results"]:
            return nothing
        data.update(page="item", current=iid)
        data["viewed"].append(iid)
        data["best_match"] = max(data["best_match"], match_count(iid, data["required"]))
        return {AGENT: _item_text(iid)}, False, True

    def _score(self, data: Mapping[str, Any], pid: str) -> float:
        if data["purchased"] is None:
            return 0.0
        return purchase_reward(data["purchased"], data["required"], data["price_cap"])

    # --- hooks -----------------------------------------------------------

    def observation_key(self, content: str) -> str:
        if content.startswith("[Search page]"):
            return "search"
        if content.startswith("[Results"):
            return "results:empty" if "no matching products" in content else "results"
        if content.startswith("[Item"):
            return "item"
        if content.strip() == NOTHING_HAPPENS:
            return "nothing"
        return "other"

    def scripted_behavior(
        self, token: str | None, state: EnvState, participant_id: str, goal_params: Mapping[str, Any]
    ) -> str:
        data = state.data
        required = list(goal_params.get("required") or data["required"])
        results: list[str] = data["results"]
        if token is None:
            token = {"search": "search_broad", "results": "open_first", "item": "buy_now"}[data["page"]]
        if token == "search_specific":
            return f"search[{', '.join(required)}]"
        if token == "search_broad":
            return f"search[{required[0]}]"
        if token == "open_first":
            return f"click[{results[0]}]" if results else "click[first result]"
        if token == "open_cheapest":
            if not results:
                return "click[cheapest result]"
            return f"click[{min(results, key=lambda i: (CATALOG[i]['price'], i))}]"
        if token == "open_next":
            if not results:
                return "click[next result]"
            seen = [i for i in data["viewed"] if i in results]
            nxt = results.index(seen[-1]) + 1 if seen else 0
            return f"click[{results[min(nxt, len(results) - 1)]}]"
        if token == "go_back":
            return "click[back to search]"
        if token == "buy_now":
            return "click[buy now]"
        # unknown token: stay put
        return f"search[{data['query']}]" if data["query"] else f"search[{required[0]}]"

    def oracle_label(self, trajectory: Trajectory, scenario: Scenario) -> ProcessRewardLabel:
        self._check_terminal(trajectory)
        state, _ = self.reset(scenario)
        critical, j = [], 0
        for turn in trajectory.turns:
            before = state.data["best_match"]
            state = self.step(state, trajectory.participant_id, turn.behavior.content).state
            if turn.strategy is None:
                continue
            j += 1
            if state.data["purchased"] is not None or state.data["best_match"] > before:
                critical.append(j)
        return ProcessRewardLabel(tuple(critical), f"turns {critical} raised the attribute match or bought")
