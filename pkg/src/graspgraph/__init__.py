"""Target-driven 6-DoF grasping toolkit.

Synthetic clutter scenes with partial depth observations, shape-completion
assisted grasp sampling, grasp-graph construction, and a grasp graph neural
network (G2N2) scored against an analytic parallel-jaw oracle.
"""

__version__ = "0.1.0"
