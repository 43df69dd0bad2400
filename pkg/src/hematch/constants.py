"""Constants used throughout the hematch package.

# this_file: src/hematch/constants.py
"""

from __future__ import annotations

# Feature vectors produced by the client-side FC-16 layer
FEATURE_WIDTH = 16

# Bit sizes of the coefficient-modulus chain: base prime, three rescaling
# primes, special key-switching prime. Sums to 240 bits.
DEFAULT_MODULUS_CHAIN = (60, 40, 40, 40, 60)
DEFAULT_SCALE_BITS = 40

PRODUCTION_POLY_DEGREE = 16_384
TEST_POLY_DEGREE = 4_096

# Error distribution for RLWE samples
ERROR_STDDEV = 3.2

# Relative scale difference tolerated between operands before re-encoding
SCALE_TOLERANCE = 2.0**-30

# Binary container formats
CIPHERTEXT_MAGIC = b"HMCTXT\x00\x01"
PUBLIC_KEY_MAGIC = b"HMPUBK\x00\x01"
GALOIS_KEY_MAGIC = b"HMGALK\x00\x01"
RELIN_KEY_MAGIC = b"HMRLNK\x00\x01"
SECRET_KEY_MAGIC = b"HMSECK\x00\x01"
FORMAT_VERSION = 1
DIGEST_SIZE = 16

# Registry directory layout
IDENTITIES_FILE = "identities.txt"
OCCUPANCY_FILE = "occupancy.txt"
SHARD_FILE_TEMPLATE = "shard-{index:05d}.ct"
IDENTITIES_HEADER = "# hematch identities v1"
OCCUPANCY_HEADER = "# hematch occupancy v1"

# Wire protocol
MAX_ENVELOPE_SIZE = 1 << 31
DEFAULT_DEADLINE_S = 10.0

# Decision operating points
DEFAULT_THRESHOLD = 0.2
