"""
Matrix-Treatment Balancing

Weighted Euclidean balancing weights for matrix-valued treatments, with
parametric and broadcasted spline effect estimators and a simulation lab.
"""

__version__ = "0.1.0"
