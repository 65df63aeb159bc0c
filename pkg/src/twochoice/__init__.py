"""Simulator and analytic toolkit for the continuous-time d-choice balls-and-bins process."""
from .core import (EventRecord, LoadState, RandomSource, SimParams, TailProfile,
                   build_state, place_ball, remove_ball)
from .engine import (RunRecord, equilibrium_sample, next_event, sequential_throw_run,
                     simulate_until)

__version__ = "0.1.0"
