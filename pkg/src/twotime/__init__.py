"""Two-time position correlations: standard quantum predictions, pilot-wave trajectories and pointer measurements."""
__version__ = "0.1.0"
