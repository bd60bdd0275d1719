"""Unit tests for cdma_downlink."""
