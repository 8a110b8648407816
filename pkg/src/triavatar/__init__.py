"""Single-image clothed avatar reconstruction with tri-plane transformer
features, a procedural articulated body prior, and a hybrid feature query."""

__version__ = "0.1.0"
