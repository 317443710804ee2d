"""Exception types shared across the package."""


class PrivForestError(Exception):
    """Base class for all library errors."""


# hecore
class KeyMismatch(PrivForestError):
    pass


class ValueTooLong(PrivForestError):
    pass


class WidthMismatch(PrivForestError):
    pass


class DepthError(PrivForestError):
    pass


# forest
class EmptyFeaturePool(PrivForestError):
    pass


class MinOneTree(PrivForestError):
    pass


class MalformedTransaction(PrivForestError):
    pass


# pisum
class TableFull(PrivForestError):
    pass


class IdDomainError(PrivForestError):
    pass


# protocol
class ProtocolViolation(PrivForestError):
    pass


class NoResponse(PrivForestError):
    pass


class UnknownLeafId(PrivForestError):
    pass


class NoRoute(PrivForestError):
    pass


# simnet
class UnknownParty(PrivForestError):
    pass


# analysis
class DomainError(PrivForestError):
    pass


# cli
class ConfigError(PrivForestError):
    pass
