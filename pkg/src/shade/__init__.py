"""Deep density-based clustering with a density-connectivity loss."""
