"""Mining corner-case trajectories from recorded or synthetic traffic."""

__version__ = "0.1.0"
