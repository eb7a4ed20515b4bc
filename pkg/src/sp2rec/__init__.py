"""Selective-privacy collaborative filtering: public server model plus on-device private fine-tuning."""

__version__ = "0.1.0"
