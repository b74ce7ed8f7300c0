"""Hard-distance Elastic loss and momentum-dictionary metric learning."""

__version__ = "0.1.0"
