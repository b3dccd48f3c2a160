"""
eotrain - memory-planned training runtime driven by execution orders
"""

__version__ = "0.1.0"
__author__ = "ReScienceLab"
__description__ = "Execution-order based memory planning, swapping and training for small networks"
