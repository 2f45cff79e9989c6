"""Convolutional-LSTM classifier for damaged fingerprints, built on numpy
with hand-written backpropagation."""

__version__ = "0.1.0"
