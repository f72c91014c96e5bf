"""Impact-based transportation of free-floating objects: STL-constrained
Bezier planning, online impact replanning and impact-aware MPC."""
__version__ = "0.1.0"
