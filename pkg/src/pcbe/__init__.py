"""Privacy-preserving interest matching and community overlay simulation for P2P OSNs."""

__version__ = "0.1.0"
