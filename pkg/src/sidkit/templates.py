"""Versioned prompt templates, 20 per task family.

Each template is a ``str.format`` pattern. Every one names the task, a
``Target Entity Type`` line and the expected output format. The set is
the cross product of 4 openers and 5 bodies per task; bump
``TEMPLATE_VERSION`` whenever any string changes, since emitted records
depend on it.
"""

from __future__ import annotations

import itertools
import random
import string

TEMPLATE_VERSION = 2
TEMPLATES_PER_TASK = 20

TASKS = ("recommend", "retrieve", "recsplain", "profile", "align_s2t", "align_t2s", "align_s2type")

_OPENERS = {
    "recommend": (
        "Pick the {item_type} this listener should hear next.",
        "Given a listening history, guess the next {item_type}.",
        "Task: next-item recommendation.",
        "You recommend {item_type} content to listeners.",
    ),
    "retrieve": (
        "Match a typed search to one catalog entry.",
        "Task: text-based retrieval.",
        "You find the catalog item that best matches a search query.",
        "Search the catalog for the requested {item_type}.",
    ),
    "recsplain": (
        "Propose a {item_type} and say what makes it a good fit.",
        "Task: recommend an item and explain why.",
        "Suggest one {item_type} and justify it from the listening history.",
        "You recommend {item_type} content and give a short rationale.",
    ),
    "profile": (
        "You analyze listening habits.",
        "Task: user understanding.",
        "Describe the interests of this listener.",
        "You write short interest profiles of users.",
    ),
    "align_s2t": (
        "Describe the following item.",
        "Task: verbalize a Semantic ID.",
        "What is this item about?",
        "Give the title and a short description of this item.",
    ),
    "align_t2s": (
        "Find the item that matches this description.",
        "Task: map text to a Semantic ID.",
        "Which {item_type} is described here?",
        "Return the Semantic ID of the item described below.",
    ),
    "align_s2type": (
        "What type of item is this?",
        "Task: identify the item type.",
        "Classify the following item by its type.",
        "Name the entity type of this Semantic ID.",
    ),
}

_SID_OUT = "Output format: Semantic ID only, between [SID] and [/SID]."
_TEXT_OUT = "Output format: text only."
_MIXED_OUT = "Output format: a Semantic ID followed by a short text explanation."

_BODIES = {
    "recommend": (
        "\nUser history: {history}\nCountry: {country}\nLanguages: {languages}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\n[history]\n{history}\n[country] {country}\n[languages] {languages}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\nRecent streams, oldest first: {history}\nRegistration country: {country}; languages: {languages}.\n"
        "Target Entity Type: {item_type}\n" + _SID_OUT,
        "\nTarget Entity Type: {item_type}\n" + _SID_OUT + "\nHistory: {history}\nCountry {country}, languages {languages}.",
        "\nNew listeners have no history; fall back on country and language.\nHistory: {history}\nCountry: {country}\n"
        "Languages: {languages}\nRecommend the next item.\nTarget Entity Type: {item_type}\n" + _SID_OUT,
    ),
    "retrieve": (
        "\nSearch: {query}\nCountry: {country}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\n[query] {query}\n[country] {country}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\nQuery: {query} (country {country})\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\nTarget Entity Type: {item_type}\n" + _SID_OUT + "\nThe user in {country} searched for: {query}",
        "\nReturn the single most relevant item.\nQuery: {query}\nCountry: {country}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
    ),
    "recsplain": (
        "\nUser history: {history}\nCountry: {country}\nLanguages: {languages}\nTarget Entity Type: {item_type}\n" + _MIXED_OUT,
        "\nHistory: {history}\nRegistered in {country}, listens in {languages}.\nTarget Entity Type: {item_type}\n" + _MIXED_OUT,
        "\nTarget Entity Type: {item_type}\n" + _MIXED_OUT + "\nPast streams: {history}\nCountry: {country}; languages: {languages}",
        "\nExplain how the recommendation relates to the history.\nHistory: {history}\nCountry: {country}\n"
        "Languages: {languages}\nTarget Entity Type: {item_type}\n" + _MIXED_OUT,
        "\n[history]\n{history}\n[country] {country}\n[languages] {languages}\nTarget Entity Type: {item_type}\n" + _MIXED_OUT,
    ),
    "profile": (
        "\nHistory: {history}\nCountry: {country}\nLanguages: {languages}\nTarget Entity Type: none\n" + _TEXT_OUT,
        "\nListening history, oldest first: {history}\nTarget Entity Type: none\n" + _TEXT_OUT + "\nCountry {country}, languages {languages}.",
        "\nSummarize the main interests in two sentences.\nItems: {history}\nCountry: {country}\nLanguages: {languages}\n"
        "Target Entity Type: none\n" + _TEXT_OUT,
        "\nTarget Entity Type: none\n" + _TEXT_OUT + "\nUser items: {history}\nCountry: {country}; languages: {languages}",
        "\n[items]\n{history}\n[country] {country}\n[languages] {languages}\nTarget Entity Type: none\n" + _TEXT_OUT,
    ),
    "align_s2t": (
        "\nItem: {item}\nTarget Entity Type: none\n" + _TEXT_OUT,
        "\n{item}\nTarget Entity Type: none\n" + _TEXT_OUT,
        "\nSemantic ID: {item}\nTarget Entity Type: none\n" + _TEXT_OUT,
        "\nTarget Entity Type: none\n" + _TEXT_OUT + "\nItem: {item}",
        "\nVerbalize {item} in one line.\nTarget Entity Type: none\n" + _TEXT_OUT,
    ),
    "align_t2s": (
        "\nDescription: {query}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\n{query}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\nQuery: {query}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
        "\nTarget Entity Type: {item_type}\n" + _SID_OUT + "\nText: {query}",
        "\nFind: {query}\nTarget Entity Type: {item_type}\n" + _SID_OUT,
    ),
    "align_s2type": (
        "\nItem: {item}\nTarget Entity Type: none\n" + _TEXT_OUT,
        "\n{item}\nTarget Entity Type: none\n" + _TEXT_OUT + " Answer with the type name.",
        "\nSemantic ID: {item}\nTarget Entity Type: none\n" + _TEXT_OUT,
        "\nTarget Entity Type: none\n" + _TEXT_OUT + "\nItem: {item}",
        "\nIs {item} an artist, a show, an episode or an audiobook?\nTarget Entity Type: none\n" + _TEXT_OUT,
    ),
}

_SUFFIX = "\nASSISTANT: "

TEMPLATES: dict[str, tuple[str, ...]] = {
    task: tuple("USER: " + o + b + _SUFFIX for o, b in itertools.product(_OPENERS[task], _BODIES[task]))
    for task in TASKS
}


def choose_template(task: str, template_seed: int) -> str:
    if task not in TEMPLATES:
        raise ValueError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    options = TEMPLATES[task]
    return options[random.Random(template_seed).randrange(len(options))]


def placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}
