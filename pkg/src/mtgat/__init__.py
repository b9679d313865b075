"""Multimodal temporal graph attention networks on a small numpy autodiff engine."""
