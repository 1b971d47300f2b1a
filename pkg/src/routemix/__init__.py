"""routemix: routing-share what-if analysis for urban traffic CO2.

Pipeline: tile-level demand estimation and trip sampling, fastest-path and
noise-perturbed routing (plus external navigation providers), time-stepped
microscopic traffic simulation, per-road CO2 aggregation, and the statistics
needed to compare routing mixes (Gini, heavy-tail fits, JS divergence).
"""

__version__ = "0.1.0"
