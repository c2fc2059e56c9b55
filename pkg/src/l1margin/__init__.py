"""Simulation and stability-margin analysis for L1 adaptive control loops.

Modules:

* :mod:`l1margin.linsys` -- state-space / transfer-function numerics, L1 gains.
* :mod:`l1margin.l1ctrl` -- the adaptive controller and its projection laws.
* :mod:`l1margin.simulate` -- adaptive, reference and delayed LTI loops.
* :mod:`l1margin.margins` -- delay and gain margins, transient bounds.
* :mod:`l1margin.scenario_file` and :mod:`l1margin.cli` -- file input and CLI.
"""
__version__ = "0.1.0"
