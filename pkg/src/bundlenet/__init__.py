"""Bundle recommendation on a user-item-bundle tripartite graph."""

__version__ = "0.1.0"
