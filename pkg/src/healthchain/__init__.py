"""Patient-centred healthcare blockchain prototype and throughput simulator."""

__version__ = "0.1.0"
