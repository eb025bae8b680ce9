import json
import os

import pytest
from hypothesis import HealthCheck, settings

import dcirc
from dcirc.model import diagram_from_document

settings.register_profile("thorough", max_examples=400, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("DCIRC_HYPOTHESIS", "default"))


@pytest.fixture(scope="session")
def oil_field():
    return dcirc.example("oil_field")


@pytest.fixture(scope="session")
def wildcatter():
    return dcirc.example("wildcatter")


def coin_document(p=0.5, values=(0.0, 1.0), utility=None):
    return {
        "name": "coin",
        "value_unit": "M$",
        "nodes": [
            {"id": "X", "kind": "chance", "states": ["h", "t"], "parents": [], "cpt": [[p, 1 - p]]},
            {"id": "U", "kind": "utility", "parents": ["X"], "values": list(values)},
        ],
        "utility_function": utility or {"type": "exponential", "risk_aversion": 0.1},
    }


def coin(**kw):
    return diagram_from_document(coin_document(**kw))


def one_decision(values=(1.0, 2.0), availability=None):
    node = {"id": "D", "kind": "decision", "alternatives": ["a", "b"], "parents": []}
    if availability is not None:
        node["availability"] = availability
    return diagram_from_document({
        "name": "choice", "value_unit": "M$",
        "nodes": [node, {"id": "U", "kind": "utility", "parents": ["D"], "values": list(values)}],
        "utility_function": {"type": "linear"},
    })


@pytest.fixture
def wildcatter_document(wildcatter):
    return json.loads(json.dumps(wildcatter.to_document()))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in mod.CRITERIA:
        if name in mod.RESULTS:
            terminalreporter.write_line(mod._line(name, *mod.RESULTS[name]))
