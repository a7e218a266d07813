"""SKI-CL Pipeline - Continual Multivariate Forecasting with Structural Knowledge"""
__version__ = "1.0.0"
