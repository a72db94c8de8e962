"""Robust sparse regression with deep diagonal linear networks."""

from ._dln import *  # noqa: F401,F403
