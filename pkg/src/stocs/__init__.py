"""Exchange-method contact-implicit trajectory optimization and multi-modal
planar manipulation planning."""

__version__ = "0.1.0"
