"""Two-party equality-testing / set-intersection protocol engine.

Bit-exact cost accounting, Monte Carlo error estimation, and a
round-synchronous message-passing simulator for triangle enumeration.
"""

__version__ = "0.1.0"
