"""Exception hierarchy shared by all advsim modules."""


class AdvsimError(Exception):
    """Base class for every error raised by this package."""


# --- function model / ingestion ---

class SchemaError(AdvsimError):
    """Ingestion document is missing a field or has a wrongly typed one."""


class GraphError(AdvsimError):
    """Structurally broken CFG (dangling successor, empty block, bad entry)."""


class FilterError(AdvsimError):
    """Function rejected by the corpus admission filter (strict mode)."""


# --- transformations ---

class NotApplicable(AdvsimError):
    """The requested transformation cannot be applied at this position."""


class InvalidStrand(AdvsimError):
    """Instruction sequence violates the strand constraints."""


# --- strand database / candidate pool ---

class EmptyDb(AdvsimError):
    """No strand survived extraction filtering."""


class InsufficientStrands(AdvsimError):
    """The strand database is smaller than the requested pool capacity."""


# --- similarity oracles ---

class OracleError(AdvsimError):
    """A similarity oracle failed to produce a score."""


class Timeout(OracleError):
    """Remote oracle did not answer in time."""


class ProtocolError(OracleError):
    """Remote oracle sent a malformed or out-of-protocol reply."""


class RemoteFailure(OracleError):
    """Remote oracle reported that it cannot score the pair."""


# --- interpreter ---

class IllegalInstruction(AdvsimError):
    """Mnemonic or operands outside the mini-ISA contract."""


class OutOfFuel(AdvsimError):
    """Execution exceeded its fuel budget (treated as a skip by oracles)."""


# --- evaluation harness ---

class CorpusTooSmall(AdvsimError):
    """Not enough variant groups to build the requested samples."""


class BadGroup(AdvsimError):
    """A variant group does not contain exactly four members."""
