"""Multi-robot reaching workcells: simulator, learned planner, baselines."""

__version__ = "0.1.0"
