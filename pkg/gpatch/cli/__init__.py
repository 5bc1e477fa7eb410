"""Command line interface of gpatch."""
