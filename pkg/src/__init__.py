"""
DiseaseMap Engine - пространственно-временное картирование заболеваемости.

Основной пакет проекта.
"""

__version__ = "1.0.0"
