"""Budgeted, feedback-driven content search over an emulated smartphone fleet.

The package has three layers:

* query/predicate machinery (`query`, `predicates`) -- the XML query format,
  the predicate registry, and the built-in content predicates;
* the execution core (`estimator`, `planner`, `energy`, `device`) -- online
  cost/selectivity estimation, conditional-rank ordering with a wireless
  pseudo-predicate partition point, and virtual-time energy accounting;
* coordination (`server`, `httpapi`, `corpus`, `experiments`, `cli`) -- the
  budgeted search coordinator, its HTTP surface, corpus synthesis, and the
  experiment runners.
"""

from theia.config import CostModel, NetworkProfile, SimConfig, WIFI, G3

__all__ = ["CostModel", "NetworkProfile", "SimConfig", "WIFI", "G3"]
__version__ = "0.1.0"
