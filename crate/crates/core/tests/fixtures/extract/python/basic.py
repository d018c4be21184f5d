def add(a, b):
    """Adds."""
    return a + b


def sub(a, b):
    return a - b
