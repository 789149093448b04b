"""Few-shot backbone pipeline: IR, fixed-point numerics, systolic-array compiler and
simulator, episodic NCM evaluation and design-space sweeps."""

__version__ = "0.1.0"
