import numpy as np
import pytest

from objmimic.ingest import demo_from_dict
from objmimic.model import load_bundled_model
from objmimic.plan import PlanConfig, generate_plan
from objmimic.providers import RuleBasedProvider
from objmimic.synth import synthesize_demo, task_config_document
from objmimic.taskconfig import parse_task_config


@pytest.fixture(scope="session")
def humanoid():
    return load_bundled_model("humanoid")


@pytest.fixture(scope="session")
def hand_model():
    return load_bundled_model("robot_hand")


@pytest.fixture(scope="session")
def canonical_model():
    return load_bundled_model("canonical_hand")


class TaskFixture:
    """One synthesized template: demo doc, parsed demo, plan, task config."""

    def __init__(self, template: str, seed: int = 7):
        self.template = template
        self.doc, self.meta = synthesize_demo(template, seed)
        self.trace, self.tracks = demo_from_dict(self.doc)
        self.plan = generate_plan(self.trace, self.tracks, PlanConfig(), RuleBasedProvider())
        self.config = parse_task_config(task_config_document(template, self.meta))


@pytest.fixture(scope="session")
def pick_place():
    return TaskFixture("pick-place")


@pytest.fixture(scope="session")
def pour():
    return TaskFixture("pour")


@pytest.fixture(scope="session")
def push_close():
    return TaskFixture("push-close")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
