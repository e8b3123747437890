"""Network stress testing: exposure reconstruction, DebtRank contagion, fire sales and loss metrics."""

__version__ = "0.1.0"
