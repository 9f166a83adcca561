"""Vision-based 2D navigation with separately trained perception and
dynamics models composed into one integrated model for sampling-based MPC,
plus the conventional-hierarchy baseline and a simulator benchmark."""

__version__ = "0.1.0"
