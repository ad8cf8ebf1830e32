"""Self-modulated and semantic-aware token selection for SFT, at desk scale."""

__version__ = "0.1.0"
