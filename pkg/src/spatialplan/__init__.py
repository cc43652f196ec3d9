"""Two-stage spatial motion planner on Pythagorean-hodograph splines."""

__version__ = "0.1.0"
