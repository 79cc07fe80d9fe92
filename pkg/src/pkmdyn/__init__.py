"""Kinematics and dynamics of parallel kinematic manipulators with
kinematic loops in their limbs, via constraint embedding."""
from .errors import DivergenceError, PKMError, SingularityError, ValidationError
from .models import build_delta, build_fourbar, build_from_spec, load_model, save_model

__all__ = [
    "PKMError", "ValidationError", "SingularityError", "DivergenceError",
    "build_delta", "build_fourbar", "build_from_spec", "load_model", "save_model",
]
__version__ = "0.1.0"
