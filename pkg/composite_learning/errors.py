class CompositeLearningError(Exception):
    """Base exception for every domain failure raised by this package"""

    pass
