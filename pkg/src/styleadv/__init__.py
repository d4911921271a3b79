"""Black-box attack on video classifiers through temporally consistent style transfer."""

__version__ = "0.1.0"
