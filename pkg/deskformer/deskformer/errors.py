class ConfigurationError(ValueError):
    """A configuration value is missing, unknown or out of its valid range."""
