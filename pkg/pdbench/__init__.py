# Partial decoupling verification suite

__version__ = "0.3.0"
