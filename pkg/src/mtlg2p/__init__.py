"""Multitask G2P: encoder-decoder LSTM with an Anglicism classifier head."""

__version__ = "0.1.0"
