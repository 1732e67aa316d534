"""Group Loss for deep metric learning, in plain numpy."""

__version__ = "0.1.0"
