"""
Synthetic data and oracles for pfsgld tests.
"""
