"""Ensemble DLN time stepping for the Navier-Stokes equations."""
