"""Flow-composed implicit Runge-Kutta integrators for perturbed ODEs."""

__version__ = "0.1.0"
