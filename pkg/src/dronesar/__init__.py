"""Multi-drone search-and-rescue missions: simulator, advising agent, planner."""

__version__ = "0.1.0"
