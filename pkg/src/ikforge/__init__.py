"""Inverse kinematics for serial revolute chains: analytical, numerical and
distal-teaching solvers plus an evaluation harness."""

__version__ = "0.1.0"
