"""
pocco.types
~~~~~~~~~~~~~~

Typings for the files pocco reads and writes

:license: MIT, see LICENSE for more details.
"""
