__all__ = ["graph", "cli", "storage"]
