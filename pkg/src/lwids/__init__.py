"""Lightweight flow-based intrusion detection with SHAP-guided feature selection."""

__version__ = "0.1.0"
