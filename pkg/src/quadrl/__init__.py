"""Quadrotor waypoint-control research toolkit.

Simulates a parameterized plus-frame quadrotor, trains a soft actor-critic
waypoint controller under domain randomization, tunes cascaded PID baselines
with CMA-ES, and evaluates everything on waypoint-guidance and payload
pick-up-and-drop tasks.
"""

__version__ = "0.1.0"
