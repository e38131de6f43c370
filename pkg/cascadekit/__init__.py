"""cascadekit: Simulate Ruelle cascades and check approximate ultrametricity of spin glasses."""

from . import cascades, clustering, debug, diagnostics, rates, spinglass, trees, util  # noqa: F401
from .experiment import ExperimentConfig, RunReport, run  # noqa: F401

__version__ = "0.1.0"
