"""Simplified Bitcoin-style chain.

Blocks, transactions, Merkle roots, a seeded synthetic chain generator and
UTXO-based verification.  The byte layout used for hashing is documented in
``docs/FORMAT.md``; every multi-byte integer is little-endian and every hash
is a single SHA-256 pass.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import (
    BadCoinbase,
    BadMerkle,
    BadPow,
    BadTx,
    BrokenLink,
    DecodeError,
    EmptyList,
    InvalidParams,
    MissingUtxo,
    ScriptMismatch,
    TxError,
    ValueOverspend,
)

HASH_SIZE = 32
HEADER_SIZE = 80
ZERO_HASH = bytes(HASH_SIZE)
BLOCK_SIZE = 1_000_000  # bytes; MB is decimal throughout
COINBASE_REWARD = 50 * 100_000_000
DEFAULT_BITS = 4  # accepts ~1/16 of header hashes
MAX_BITS = 255

_HEADER = struct.Struct("<32s32sQQ")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_BLOCK_PREFIX = struct.Struct("<II")  # nominal_size, tx count
_CHAIN_MAGIC = b"KRKC"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _check_hash(value: bytes, name: str) -> bytes:
    value = bytes(value)
    if len(value) != HASH_SIZE:
        raise InvalidParams(f"{name} must be {HASH_SIZE} bytes, got {len(value)}")
    return value


def _check_script(script: bytes) -> bytes:
    script = bytes(script)
    if len(script) > 0xFFFF:
        raise InvalidParams("script longer than 65535 bytes")
    return script


@dataclass(frozen=True)
class TxOut:
    amount: int
    locking_script: bytes

    def __post_init__(self):
        if not 0 <= self.amount < 1 << 64:
            raise InvalidParams(f"amount out of range: {self.amount}")
        object.__setattr__(self, "locking_script", _check_script(self.locking_script))


@dataclass(frozen=True)
class TxIn:
    prev_txid: bytes
    prev_index: int
    unlocking_script: bytes

    def __post_init__(self):
        object.__setattr__(self, "prev_txid", _check_hash(self.prev_txid, "prev_txid"))
        if not 0 <= self.prev_index < 1 << 32:
            raise InvalidParams(f"prev_index out of range: {self.prev_index}")
        object.__setattr__(self, "unlocking_script", _check_script(self.unlocking_script))

    @property
    def outpoint(self) -> tuple[bytes, int]:
        return (self.prev_txid, self.prev_index)


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxIn, ...]
    outputs: tuple[TxOut, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.outputs:
            raise InvalidParams("transaction needs at least one output")
        if not self.inputs:
            raise InvalidParams("transaction needs at least one input")
        if len(self.inputs) > 0xFFFF or len(self.outputs) > 0xFFFF:
            raise InvalidParams("too many inputs or outputs")

    @property
    def is_coinbase(self) -> bool:
        return (len(self.inputs) == 1 and self.inputs[0].prev_txid == ZERO_HASH
                and self.inputs[0].prev_index == 0)

    @cached_property
    def serialized(self) -> bytes:
        return serialize_tx(self)

    @cached_property
    def txid(self) -> bytes:
        return sha256(self.serialized)

    def total_out(self) -> int:
        return sum(o.amount for o in self.outputs)


@dataclass(frozen=True)
class BlockHeader:
    hash_prev_block: bytes
    hash_merkle_root: bytes
    bits: int
    nonce: int

    def __post_init__(self):
        object.__setattr__(self, "hash_prev_block",
                           _check_hash(self.hash_prev_block, "hash_prev_block"))
        object.__setattr__(self, "hash_merkle_root",
                           _check_hash(self.hash_merkle_root, "hash_merkle_root"))
        if not 0 <= self.bits < 1 << 64 or not 0 <= self.nonce < 1 << 64:
            raise InvalidParams("bits and nonce must fit in 64 bits")

    def serialize(self) -> bytes:
        return _HEADER.pack(self.hash_prev_block, self.hash_merkle_root, self.bits, self.nonce)

    @classmethod
    def parse(cls, data: bytes) -> "BlockHeader":
        if len(data) != HEADER_SIZE:
            raise DecodeError(f"header must be {HEADER_SIZE} bytes")
        return cls(*_HEADER.unpack(data))

    @cached_property
    def block_id(self) -> bytes:
        return hash_header(self)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: tuple[Transaction, ...]
    nominal_size: int = BLOCK_SIZE

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(self.txs))
        if not 0 <= self.nominal_size <= BLOCK_SIZE:
            raise InvalidParams(f"nominal_size must be within [0, {BLOCK_SIZE}]")

    @property
    def block_id(self) -> bytes:
        return self.header.block_id

    @cached_property
    def serialized(self) -> bytes:
        return serialize_block(self)

    def merkle_ok(self) -> bool:
        return bool(self.txs) and merkle_root([t.txid for t in self.txs]) == self.header.hash_merkle_root


@dataclass(frozen=True)
class BlockStub:
    """Placement-only block: identity and nominal size, no content."""

    block_id: bytes
    nominal_size: int = BLOCK_SIZE


# --- hashing -------------------------------------------------------------

def hash_header(header: BlockHeader) -> bytes:
    return sha256(header.serialize())


def merkle_root(txids: Sequence[bytes]) -> bytes:
    level = list(txids)
    if not level:
        raise EmptyList("merkle_root of an empty list")
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def pow_target(bits: int) -> int:
    """Header hashes (read big-endian) must be strictly below this value."""
    if not 0 <= bits <= MAX_BITS:
        raise InvalidParams(f"bits must be within [0, {MAX_BITS}]")
    return 1 << (256 - bits)


def pow_ok(header: BlockHeader) -> bool:
    if header.bits > MAX_BITS:
        return False
    return int.from_bytes(header.block_id, "big") < pow_target(header.bits)


def block_work(bits: int) -> int:
    # expected number of hash trials; fork choice sums this
    return 1 << bits


# --- serialization -------------------------------------------------------

def serialize_tx(tx: Transaction) -> bytes:
    parts = [_U16.pack(len(tx.inputs))]
    for txin in tx.inputs:
        parts += [txin.prev_txid, _U32.pack(txin.prev_index),
                  _U16.pack(len(txin.unlocking_script)), txin.unlocking_script]
    parts.append(_U16.pack(len(tx.outputs)))
    for out in tx.outputs:
        parts += [_U64.pack(out.amount), _U16.pack(len(out.locking_script)), out.locking_script]
    return b"".join(parts)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return bytes(chunk)

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def _read_tx(r: _Reader) -> Transaction:
    (n_in,) = r.unpack(_U16)
    inputs = []
    for _ in range(n_in):
        prev = r.take(HASH_SIZE)
        (idx,) = r.unpack(_U32)
        (slen,) = r.unpack(_U16)
        inputs.append(TxIn(prev, idx, r.take(slen)))
    (n_out,) = r.unpack(_U16)
    outputs = []
    for _ in range(n_out):
        (amount,) = r.unpack(_U64)
        (slen,) = r.unpack(_U16)
        outputs.append(TxOut(amount, r.take(slen)))
    try:
        return Transaction(tuple(inputs), tuple(outputs))
    except InvalidParams as exc:
        raise DecodeError(str(exc)) from None


def parse_tx(data: bytes) -> Transaction:
    r = _Reader(data)
    tx = _read_tx(r)
    if r.pos != len(data):
        raise DecodeError("trailing bytes after transaction")
    return tx


def serialize_block(block: Block) -> bytes:
    parts = [block.header.serialize(), _BLOCK_PREFIX.pack(block.nominal_size, len(block.txs))]
    parts += [tx.serialized for tx in block.txs]
    return b"".join(parts)


def parse_block(data: bytes) -> Block:
    r = _Reader(data)
    header = BlockHeader.parse(r.take(HEADER_SIZE))
    nominal, n_tx = r.unpack(_BLOCK_PREFIX)
    txs = tuple(_read_tx(r) for _ in range(n_tx))
    if r.pos != len(data):
        raise DecodeError("trailing bytes after block")
    try:
        return Block(header, txs, nominal)
    except InvalidParams as exc:
        raise DecodeError(str(exc)) from None


def dump_chain(blocks: Iterable[Block], path) -> None:
    blocks = list(blocks)
    with open(path, "wb") as fh:
        fh.write(_CHAIN_MAGIC + _U32.pack(len(blocks)))
        for b in blocks:
            raw = b.serialized
            fh.write(_U32.pack(len(raw)) + raw)


def load_chain(path) -> list[Block]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != _CHAIN_MAGIC:
        raise DecodeError("not a chain dump")
    (count,) = r.unpack(_U32)
    out = []
    for _ in range(count):
        (n,) = r.unpack(_U32)
        out.append(parse_block(r.take(n)))
    if r.pos != len(r.data):
        raise DecodeError("trailing bytes after chain")
    return out


# --- UTXO set ------------------------------------------------------------

Outpoint = tuple[bytes, int]


class UtxoSet:
    """Unspent outputs keyed by (txid, output index).

    Treated as a value: ``apply_block`` returns a new set.  Only the
    module-internal replay helpers mutate ``_entries``.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: dict[Outpoint, TxOut] | None = None):
        self._entries = dict(entries) if entries else {}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, outpoint):
        return outpoint in self._entries

    def __iter__(self) -> Iterator[Outpoint]:
        return iter(self._entries)

    def __eq__(self, other):
        if not isinstance(other, UtxoSet):
            return NotImplemented
        return self._entries == other._entries

    __hash__ = None

    def __repr__(self):
        return f"UtxoSet({len(self)} entries, {self.total_value()} sat)"

    def get(self, outpoint: Outpoint) -> TxOut | None:
        return self._entries.get(outpoint)

    def items(self):
        return self._entries.items()

    def copy(self) -> "UtxoSet":
        return UtxoSet(self._entries)

    def total_value(self) -> int:
        return sum(o.amount for o in self._entries.values())


def _check_inputs(tx: Transaction, entries: dict) -> int:
    """Returns the input total; raises on the first bad input."""
    total = 0
    seen = set()
    for txin in tx.inputs:
        op = txin.outpoint
        if op in seen or op not in entries:
            raise MissingUtxo(f"outpoint {op[0].hex()[:16]}:{op[1]} is not unspent")
        seen.add(op)
        out = entries[op]
        if txin.unlocking_script != out.locking_script:
            raise ScriptMismatch(f"unlocking script does not match outpoint {op[1]}")
        total += out.amount
    if total < tx.total_out():
        raise ValueOverspend(f"outputs {tx.total_out()} exceed inputs {total}")
    return total


def verify_transaction(tx: Transaction, utxo: UtxoSet) -> None:
    """Raises a TxError subclass unless ``tx`` may spend from ``utxo``."""
    if tx.is_coinbase:
        return
    _check_inputs(tx, utxo._entries)


def _apply_inplace(entries: dict, block: Block, height: int | None) -> None:
    h = -1 if height is None else height
    fees = 0
    for pos, tx in enumerate(block.txs):
        try:
            if tx.is_coinbase != (pos == 0):
                raise BadCoinbase("coinbase must be exactly the first transaction")
            if pos:
                fees += _check_inputs(tx, entries) - tx.total_out()
                for txin in tx.inputs:
                    del entries[txin.outpoint]
        except TxError as exc:
            raise BadTx(h, pos, exc) from exc
        txid = tx.txid
        for i, out in enumerate(tx.outputs):
            entries[(txid, i)] = out
    if not block.txs:
        raise BadTx(h, 0, BadCoinbase("block has no transactions"))
    if block.txs[0].total_out() > COINBASE_REWARD + fees:
        raise BadTx(h, 0, ValueOverspend("coinbase pays more than reward plus fees"))


def apply_block(utxo: UtxoSet, block: Block, height: int | None = None) -> UtxoSet:
    entries = dict(utxo._entries)
    _apply_inplace(entries, block, height)
    out = UtxoSet()
    out._entries = entries
    return out


def build_utxoset(blocks: Iterable[Block]) -> UtxoSet:
    entries: dict = {}
    for height, block in enumerate(blocks):
        _apply_inplace(entries, block, height)
    out = UtxoSet()
    out._entries = entries
    return out


def verify_header_chain(headers: Sequence[BlockHeader]) -> None:
    """Links first, then proof of work, so a mutated header reports the broken child link."""
    for h in range(1, len(headers)):
        if headers[h].hash_prev_block != headers[h - 1].block_id:
            raise BrokenLink(h)
    for h, header in enumerate(headers):
        if not pow_ok(header):
            raise BadPow(h)


def verify_chain(blocks: Sequence[Block]) -> None:
    verify_header_chain([b.header for b in blocks])
    entries: dict = {}
    for h, block in enumerate(blocks):
        if not block.merkle_ok():
            raise BadMerkle(h)
        _apply_inplace(entries, block, h)


def verify_block_standalone(block: Block, height: int) -> None:
    """Content checks that need no chain context: proof of work and Merkle root."""
    if not pow_ok(block.header):
        raise BadPow(height)
    if not block.merkle_ok():
        raise BadMerkle(height)


# --- synthetic chains ----------------------------------------------------

def coinbase_tx(height: int, recipient: bytes, amount: int = COINBASE_REWARD,
                tag: bytes = b"") -> Transaction:
    script = b"cb" + _U64.pack(height) + tag
    return Transaction((TxIn(ZERO_HASH, 0, script),), (TxOut(amount, recipient),))


def mine_block(prev_id: bytes, txs: Sequence[Transaction], bits: int = DEFAULT_BITS,
               nominal_size: int = BLOCK_SIZE, start_nonce: int = 0) -> Block:
    root = merkle_root([t.txid for t in txs])
    target = pow_target(bits)
    prefix = _check_hash(prev_id, "prev_id") + root + _U64.pack(bits)
    nonce = start_nonce
    while int.from_bytes(sha256(prefix + _U64.pack(nonce)), "big") >= target:
        nonce += 1
    return Block(BlockHeader(prev_id, root, bits, nonce), tuple(txs), nominal_size)


def make_synthetic_chain(block_count: int, txs_per_block: int, seed: int, *,
                         bits: int = DEFAULT_BITS, nominal_size: int = BLOCK_SIZE,
                         n_wallets: int = 16) -> list[Block]:
    """Deterministic valid chain.

    Genesis holds a single coinbase.  Every later block holds a coinbase plus
    up to ``txs_per_block - 1`` zero-fee spends of outputs created in earlier
    blocks, picked by a PRNG seeded with ``seed``.
    """
    if block_count < 1 or txs_per_block < 1 or n_wallets < 1:
        raise InvalidParams("block_count, txs_per_block and n_wallets must be >= 1")
    rng = random.Random(seed)
    wallets = [b"wallet-%d" % i for i in range(n_wallets)]
    tag = _U64.pack(seed & (1 << 64) - 1)
    live: list[Outpoint] = []
    live_out: dict[Outpoint, TxOut] = {}
    chain = []
    prev = ZERO_HASH
    for height in range(block_count):
        txs = [coinbase_tx(height, rng.choice(wallets), tag=tag)]
        if height:
            for _ in range(txs_per_block - 1):
                if not live:
                    break
                j = rng.randrange(len(live))
                live[j], live[-1] = live[-1], live[j]
                op = live.pop()
                spent = live_out.pop(op)
                if spent.amount >= 2:
                    part = rng.randint(1, spent.amount - 1)
                    outs = (TxOut(part, rng.choice(wallets)), TxOut(spent.amount - part, rng.choice(wallets)))
                else:
                    outs = (TxOut(spent.amount, rng.choice(wallets)),)
                txs.append(Transaction((TxIn(op[0], op[1], spent.locking_script),), outs))
        for tx in txs:
            for i, out in enumerate(tx.outputs):
                live.append((tx.txid, i))
                live_out[(tx.txid, i)] = out
        block = mine_block(prev, txs, bits, nominal_size)
        chain.append(block)
        prev = block.block_id
    return chain


def make_placement_chain(block_count: int, seed: int,
                         nominal_size: int = BLOCK_SIZE) -> list[BlockStub]:
    """Placement-only blocks: ids are digests of (seed, height)."""
    if block_count < 1:
        raise InvalidParams("block_count must be >= 1")
    salt = b"placement" + _U64.pack(seed & (1 << 64) - 1)
    return [BlockStub(sha256(salt + _U64.pack(h)), nominal_size) for h in range(block_count)]
