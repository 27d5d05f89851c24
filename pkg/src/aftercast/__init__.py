"""aftercast: after-sales demand forecasting toolkit."""

__version__ = "0.1.0"
