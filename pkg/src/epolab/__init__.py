"""Energy preference optimization lab."""
