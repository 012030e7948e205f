"""
Чтение и запись входных данных и выборок.
"""

from .loader import load_counts, load_regions, merge_panel, merge_regions, read_merge
from .samples_store import load_samples, save_samples

__all__ = [
    'load_counts',
    'load_regions',
    'merge_panel',
    'merge_regions',
    'read_merge',
    'load_samples',
    'save_samples'
]
