"""Self-supervised masked-stroke pretraining for online handwriting."""

__version__ = "0.1.0"
