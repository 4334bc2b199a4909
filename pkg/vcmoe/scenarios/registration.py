"""
Registry of simulation scenarios, addressed by id.

register(id=..., entry_point='package.module:Class', kwargs=...) records a scenario;
make(id, **overrides) imports the entry point and instantiates it.
"""
import importlib
from dataclasses import dataclass, field

from vcmoe.base.errors import UsageError


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    entry_point: str
    kwargs: dict = field(default_factory=dict)

    def load(self):
        module_name, _, attr = self.entry_point.partition(':')
        return getattr(importlib.import_module(module_name), attr)


registry = {}


def register(id, entry_point, kwargs=None):
    if id in registry:
        raise UsageError(f"scenario {id!r} is already registered")
    registry[id] = ScenarioSpec(id, entry_point, dict(kwargs or {}))


def spec(id):
    try:
        return registry[id]
    except KeyError:
        raise UsageError(f"unknown scenario {id!r}; registered: {sorted(registry)}") from None


def make(id, **kwargs):
    scenario_spec = spec(id)
    cls = scenario_spec.load()
    scenario = cls(**{**scenario_spec.kwargs, **kwargs})
    scenario.id = id
    return scenario
