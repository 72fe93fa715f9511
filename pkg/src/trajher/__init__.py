"""DDPG with asymmetric hindsight relabeling on a cube-carry task."""

__version__ = "0.1.0"
