"""Interactive world-model / diffusion-planner co-refinement on a synthetic 2D driving task."""

__version__ = "0.1.0"
