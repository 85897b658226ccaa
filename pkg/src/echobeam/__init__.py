"""Joint learning of ultrasound transmit patterns and receive reconstruction."""
__version__ = "0.1.0"
