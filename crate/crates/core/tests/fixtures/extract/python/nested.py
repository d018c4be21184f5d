def outer(xs):
    """Apply a nested helper to each element."""

    def helper(x):
        """Double x."""
        return 2 * x

    return [helper(x) for x in xs]


async def fetch(url):
    '''Fetch a url asynchronously.'''
    return await get(url)
