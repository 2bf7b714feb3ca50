"""Photon statistics of bipartite harmonic emission.

Submodules: ``fock`` (truncated two-mode Fock space), ``hamiltonian``
(intraband interaction model and propagators), ``photostat`` (closed-form
statistics), ``detector`` (SPAD time-tag simulation), ``correlator`` (HBT
analysis) and ``strongfield`` (regime parameters and yield fits).
"""
__version__ = "0.1.0"
