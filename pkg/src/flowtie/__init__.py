"""4D-STEM phase retrieval: multislice simulation, TIE, FlowTIE and amplitude-flow baselines."""

__version__ = "0.1.0"
