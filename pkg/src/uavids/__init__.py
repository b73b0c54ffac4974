"""Tree-ensemble intrusion detection for UAV network traffic."""
__version__ = "0.1.0"
