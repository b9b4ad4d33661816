"""
Core numerical modules: tensors, the toy encoder, CTC and the n-gram LM.
"""
