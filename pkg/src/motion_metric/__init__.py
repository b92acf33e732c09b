# src/motion_metric/__init__.py
