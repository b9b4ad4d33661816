"""
Stability machinery: replay buffer, importance estimation and the composite objective.
"""
