"""Document-level event argument extraction with span-trigger contextual
pooling, latent role guidance and boundary-aware span classification."""

__version__ = "0.1.0"
