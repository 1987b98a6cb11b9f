"""Finite stability tests for linear systems with pointwise and distributed delays."""
from .model import DelaySystem, SystemValidationError, validate_system
from .criterion import Numerics, StabilityReport, Verdict, analyze, stability_test_thm8, stability_test_thm9

__all__ = ["DelaySystem", "SystemValidationError", "validate_system", "Numerics", "StabilityReport",
           "Verdict", "analyze", "stability_test_thm8", "stability_test_thm9"]
