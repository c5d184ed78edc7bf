"""Dynamic CT flow-imaging laboratory: ground truth, scan simulation, FBP and PINN flow estimation."""

__version__ = "0.1.0"
