"""
Frogger Advice Helper Modules

This package contains helper modules shared by the workbench library modules and
its entry points (status printing, hashing, configuration loading).
"""
