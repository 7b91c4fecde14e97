"""Functional and cycle-approximate simulator of a sparsity-aware spiking-CNN accelerator."""

__version__ = "0.1.0"
