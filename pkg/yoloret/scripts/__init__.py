# from . import cli
