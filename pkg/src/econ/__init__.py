"""
ECON - Stock Movement and Volatility Prediction

Features:
- Tweet filtering calibrated by sentiment/movement association
- Sector-aware tweet embeddings from a masked-company pretext task
- Macro and micro trend aggregation over sectors and stocks
- Attention GRU predictor for movement and abnormal volatility
- Synthetic market generator for offline runs
"""

__version__ = "0.1.0"
