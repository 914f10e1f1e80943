"""Deep LSTM sequence-to-sequence translation with fast-forward connections."""

__version__ = "0.1.0"
