"""Finite elements for box-constrained elliptic optimal control."""
