"""Self-supervised CSI representation learning with a paired-link channel simulator."""

__version__ = "0.1.0"
