"""Two-domain synthetic LiDAR toolkit: simulation, jitter, sectorized alignment and a BEV detector."""

__version__ = "0.1.0"
