"""Demo plugins shipped with the platform."""
