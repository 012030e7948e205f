"""
Командная строка проекта.

Команды fit, simulate, diagnose, forecast, report.
"""

from .main import main

__all__ = ['main']
