"""Null-controllability analysis and simulation of multiclass many-server
queueing networks operating in the many-server heavy-traffic regime.

The package splits into:

- ``model``     network description and finite-scale instances
- ``fluid``     exact-rational static fluid linear program
- ``cycles``    activity-graph cycles, control directions, assignment maps
- ``engine``    event-driven simulation core
- ``policies``  preemptive and non-preemptive scheduling controls
- ``diffusion`` constrained diffusion integrator
- ``harness``   diffusion scaling, Monte Carlo estimation, identity checks
- ``cli``       command line front end
"""

from nullq.model import NetworkSpec, ScaledInstance, validate_spec, scale_instance
from nullq.fluid import FluidSolution, solve_static_lp

__all__ = [
    "NetworkSpec",
    "ScaledInstance",
    "validate_spec",
    "scale_instance",
    "FluidSolution",
    "solve_static_lp",
    "analyze_network",
    "estimate_null_probability",
    "Scenario",
]

__version__ = "0.1.0"


def __getattr__(name):
    # harness imports most of the package; load it lazily to keep
    # `import nullq` light
    if name in ("analyze_network", "estimate_null_probability", "Scenario"):
        from nullq import harness

        return getattr(harness, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
