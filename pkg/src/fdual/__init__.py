"""Transaction-cost market duality on finite event trees."""

__version__ = "0.1.0"

from .market import (EndowmentSet, InstanceError, MarketModel, ScenarioTree,
                     UtilityFunction, build_model, instance_a, liquidation_value)
