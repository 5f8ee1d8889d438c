"""Exception hierarchy shared by every module."""


class TDMError(Exception):
    """Base class for all library errors."""


# ledger
class IssuanceForbidden(TDMError):
    pass


class BondNotActive(TDMError):
    pass


class BondStillLocked(TDMError):
    pass


class InsufficientTokens(TDMError):
    pass


class EmptyEconomy(TDMError):
    pass


# structure
class InvalidParams(TDMError):
    pass


class InvalidStructure(TDMError):
    pass


class IllegalTransition(TDMError):
    pass


class OffchainDisabled(TDMError):
    pass


class NoEconomy(TDMError):
    pass


# offchain
class EmptyPayload(TDMError):
    pass


# protocol
class UnknownPoll(TDMError):
    pass


class PollClosed(TDMError):
    pass


class PollStillOpen(TDMError):
    pass


class PollAlreadyResolved(TDMError):
    pass


class AlreadyVoted(TDMError):
    pass


class NotTokenHolder(TDMError):
    pass


class ElementNotLive(TDMError):
    pass


class ChallengePending(TDMError):
    pass


class WrongPollKind(TDMError):
    pass


class AlreadyMember(TDMError):
    pass


class DuplicateContent(TDMError):
    pass


class NotOffchainLeaf(TDMError):
    pass


class DataUnavailable(TDMError):
    pass


class NotAMember(TDMError):
    pass


class WrongPrice(TDMError):
    pass


class InvalidPartition(TDMError):
    pass


class ClockRegression(TDMError):
    pass


class ReplayMismatch(TDMError):
    """A replayed operation produced a different result than the one logged."""


# economics
class DomainError(TDMError, ZeroDivisionError):
    pass


# sim
class ConfigInvalid(TDMError):
    """Scenario config failed validation; ``problems`` holds (field path, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{path}: {msg}" for path, msg in self.problems))


class InvariantViolation(TDMError):
    pass
