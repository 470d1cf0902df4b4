try:
    from tomllib import loads  # noqa: F401
except ModuleNotFoundError:  # Python < 3.11
    from tomli import loads  # noqa: F401
