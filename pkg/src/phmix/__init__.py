"""Exit-time distributions for mixtures of absorbing Markov chains."""

__version__ = "0.1.0"
