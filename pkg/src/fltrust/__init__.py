"""Byzantine-robust federated learning with trust bootstrapping, at desk scale."""

__version__ = "0.1.0"
