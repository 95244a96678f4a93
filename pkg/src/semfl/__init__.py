"""Method-level fault localization as semantic code search over a runtime knowledge base."""

__version__ = "0.1.0"
