"""
Сервисы проекта.

Обобщённый Пуассон, латентные компоненты, модель риска, MCMC,
диагностика калибровки, прогноз и симуляция.
"""

__all__ = []
