"""Back-end fusion and evaluation of speaker verification and spoofing countermeasures."""

__version__ = "0.1.0"
