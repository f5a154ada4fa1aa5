"""Appointed-time state observers, with and without unknown inputs, and an
attack-free adaptive consensus protocol built on them."""
__version__ = "0.1.0"

from .errors import AtobsError, TauInadmissible  # noqa: E402,F401
from .synth import Kind, SynthesisConfig, synthesize  # noqa: E402,F401
from .sysmodel import LtiSystem, check_assumptions  # noqa: E402,F401
