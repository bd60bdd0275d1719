"""Utility modules for cdma_downlink."""
