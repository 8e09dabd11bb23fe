"""Docking (berthing) trajectory planner for an underactuated model-scale ship.

The package plans collision-free docking trajectories inside a nonconvex
harbor under steady wind.  A derivative-free global search over a shooting
parameterization produces an offline reference; that reference warm-starts a
fast semionline planner built on separated Hermite-Simpson collocation with
winding-number collision constraints, solved by SQP.
"""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_file(name: str) -> Path:
    """Absolute path of a bundled configuration/data file."""
    return Path(resources.files("berthplan").joinpath("data", name))


__all__ = ["data_file", "__version__"]
