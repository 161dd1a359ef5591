"""Probabilistic identification of the cardiac Purkinje network from the 12-lead ECG.

The package covers the full pipeline: harmonic flattening of endocardial
surfaces, fractal tree growth in the flattened disk, a bidirectionally coupled
tree/myocardium eikonal activation model, a lead-field ECG forward model, and
an inverse engine built on Gaussian-process Bayesian optimization plus
approximate Bayesian computation.
"""

__version__ = "0.1.0"
