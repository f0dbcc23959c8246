"""Energy-aware participant selection for federated learning on battery-powered clients."""

__version__ = "0.1.0"
