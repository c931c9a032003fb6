"""Rebuild AC power flow models with graph attention networks."""
