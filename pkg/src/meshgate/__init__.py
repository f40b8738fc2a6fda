"""Client-side web-proxy selection for heterogeneous wireless mesh networks."""

__version__ = "0.1.0"
