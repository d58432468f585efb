"""Core of TagASC"""
__version__ = "0.1.0"
