"""
anchorstream package.

Continual adaptation of a small CTC sequence encoder to a shifted target
domain through LoRA adapters, with multi-domain experience replay and
absolute-Fisher weight consolidation to limit forgetting of the general domain.
"""

__version__ = "1.0.0"
