"""Cellular V2X mode-selection and resource-allocation simulator.

Subframe-level simulation of a crossroad vehicular network where broadcast
pairs jointly pick a resource block, a transmission mode (direct or relayed
through the base station) and a discrete power level. Pairs can learn the
policy with per-agent deep Q-networks, optionally coordinated by
channel-gain spectral clustering plus periodic federated model averaging,
and are compared against random, mode-free-learning and centralized
baselines.
"""

__version__ = "0.1.0"
