"""Collaborative structural-inspection sessions.

Core pieces: rigid-transform geometry for model/world frames, a damage
ledger with measurement geometry, a last-write-wins session sync engine,
alignment-error statistics, deterministic 4G/5G transfer emulation, and a
FastAPI session server with a simulated headset client.
"""

__version__ = "0.1.0"
