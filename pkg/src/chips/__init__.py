"""Desk-scale medical-image workflow service."""
