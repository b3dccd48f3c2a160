# eotrain/core/constants.py

"""Module for storing constants used across the eotrain package."""

DEFAULT_CONFIG_NAME = "eotrain.yaml"

# float32 only
ELEM_BYTES = 4
DTYPE = "float32"

ARENA_ALIGNMENT = 64
# arena / peak-live bound above which the planner retries in size order
FRAGMENTATION_LIMIT = 1.10
DEFAULT_LOOKAHEAD = 1
DEFAULT_SEED = 0

SWAP_STORE_MAGIC = b"EOSWAP01"
SWAP_STORE_SUFFIX = ".swap"

KIB = 1024
