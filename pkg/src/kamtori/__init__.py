"""kamtori: certified KAM iteration for quasi-periodically forced
area-preserving maps with Liouvillean rotation numbers."""

__version__ = "0.1.0"
