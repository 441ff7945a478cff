"""SizeMorph - resize garments and models with learned deformation fields."""

__version__ = "0.1.0"
