"""Scenario runners and the command-line front end."""
