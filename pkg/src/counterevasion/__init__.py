"""Decision-tree evasion attacks and proactive counter-evasion on
synthetic malicious-website features."""

__version__ = "0.1.0"
