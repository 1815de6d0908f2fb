"""Joint video stabilization and stitching through unified mesh-vertex motion."""

__version__ = "0.1.0"
