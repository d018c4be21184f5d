def good(x):
    """Still extracted."""
    return x


def bad(x:
    return x
