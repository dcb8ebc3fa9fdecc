"""Blockchain storage sharded over a Chord ring with neighbour replication."""
from ._kernels import BACKEND as KERNEL_BACKEND
from .chain import (
    Block,
    BlockHeader,
    BlockStub,
    Transaction,
    TxIn,
    TxOut,
    UtxoSet,
    apply_block,
    build_utxoset,
    hash_header,
    make_placement_chain,
    make_synthetic_chain,
    merkle_root,
    verify_chain,
    verify_transaction,
)
from .chord import OverlayNode, Ring, replica_set, responsible_node, ring_id
from .cluster import (
    Cluster,
    bootstrap_cluster,
    get_block,
    join_cluster,
    leave_cluster,
    receive_new_block,
    resolve_fork,
    store_block,
)

__version__ = "0.1.0"
