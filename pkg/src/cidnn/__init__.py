"""Speech enhancement with concatenated identical DNN stages."""

__version__ = "0.1.0"
