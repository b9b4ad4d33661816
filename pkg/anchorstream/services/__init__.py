"""
Data generation, optimization, training loop, metrics and result files.
"""
