"""Exception hierarchy shared by every karakasa module."""


class KarakasaError(Exception):
    pass


class InvalidParams(KarakasaError, ValueError):
    pass


class ConfigError(InvalidParams):
    """Experiment parameters violate the simulation restrictions."""


class InvariantViolation(KarakasaError):
    pass


class DecodeError(KarakasaError, ValueError):
    pass


# --- chain ---------------------------------------------------------------

class ChainError(KarakasaError):
    pass


class EmptyList(ChainError, ValueError):
    pass


class TxError(ChainError):
    pass


class MissingUtxo(TxError):
    pass


class ScriptMismatch(TxError):
    pass


class ValueOverspend(TxError):
    pass


class BadCoinbase(TxError):
    pass


class BlockError(ChainError):
    def __init__(self, height, detail=""):
        self.height = height
        self.detail = detail
        msg = f"{type(self).__name__}({height})"
        super().__init__(f"{msg}: {detail}" if detail else msg)

    def __eq__(self, other):
        return type(self) is type(other) and self.args == other.args

    def __hash__(self):
        return hash((type(self), self.args))


class BrokenLink(BlockError):
    pass


class BadPow(BlockError):
    pass


class BadMerkle(BlockError):
    pass


class BadTx(BlockError):
    def __init__(self, height, pos, cause):
        self.pos = pos
        self.cause = cause
        super().__init__(height, f"tx {pos}: {type(cause).__name__}: {cause}")


class UnknownParent(BlockError):
    pass


# --- overlay -------------------------------------------------------------

class OverlayError(KarakasaError):
    pass


class BadM(OverlayError, ValueError):
    pass


class EmptyRing(OverlayError):
    pass


class NotEnoughNodes(OverlayError):
    pass


class NotStabilized(OverlayError):
    pass


class IdCollision(OverlayError):
    pass


class UnknownNode(OverlayError, KeyError):
    pass


# --- cluster -------------------------------------------------------------

class ClusterError(KarakasaError):
    pass


class InvalidChain(ClusterError):
    pass


class JoinRejected(ClusterError):
    pass


class NotFound(ClusterError, KeyError):
    pass


class AllReplicasCorrupt(ClusterError):
    pass


class OrphanBranch(ClusterError):
    pass


# --- adversary -----------------------------------------------------------

class NoCopyHeld(ClusterError, KeyError):
    pass


class TargetNotFound(ClusterError, KeyError):
    pass
