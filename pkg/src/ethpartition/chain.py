"""Block tree with Homestead difficulty adjustment and total-difficulty fork choice.

A :class:`BlockTree` is one node's local view of the chain. Blocks are
immutable and may be shared between trees; each tree keeps its own cached
total difficulty, arrival order and canonical head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple


class ChainError(ValueError):
    """Raised for malformed blocks or queries against unknown blocks."""


@dataclass(frozen=True)
class HomesteadParams:
    """Difficulty and uncle parameters. Defaults are the Homestead values."""

    bound_divisor: int = 2048
    duration_divisor: int = 10
    min_factor: int = -99
    bomb_period: int = 100_000
    bomb_offset: int = 2
    min_difficulty: int = 131_072
    uncle_window: int = 7
    max_uncles: int = 2

    @classmethod
    def from_mapping(cls, overrides: Optional[Mapping[str, int]]) -> "HomesteadParams":
        if not overrides:
            return cls()
        unknown = set(overrides) - set(cls.__dataclass_fields__)
        if unknown:
            raise ChainError(f"unknown Homestead parameter(s): {', '.join(sorted(unknown))}")
        return cls(**{k: int(v) for k, v in overrides.items()})


HOMESTEAD = HomesteadParams()


def difficulty_bomb(block_number: int, params: HomesteadParams = HOMESTEAD) -> int:
    """Return floor(2 ** (number // period - offset)), which is 0 for negative exponents."""
    exponent = block_number // params.bomb_period - params.bomb_offset
    return 2**exponent if exponent >= 0 else 0


def compute_difficulty(
    parent_difficulty: int,
    interval: int,
    block_number: int,
    params: HomesteadParams = HOMESTEAD,
) -> int:
    """Difficulty of a block mined ``interval`` seconds after a parent of ``parent_difficulty``."""
    if parent_difficulty <= 0:
        raise ChainError(f"parent difficulty must be positive, got {parent_difficulty}")
    if interval <= 0:
        raise ChainError(f"timestamps must strictly increase, got interval {interval}")
    if block_number < 1:
        raise ChainError(f"block number must be >= 1, got {block_number}")
    fraction = parent_difficulty // params.bound_divisor
    factor = max(1 - interval // params.duration_divisor, params.min_factor)
    result = parent_difficulty + fraction * factor + difficulty_bomb(block_number, params)
    return max(result, params.min_difficulty)


def child_timestamp(parent_timestamp: int, now_seconds: float) -> int:
    """Integer timestamp for a block built on a parent at simulated time ``now_seconds``."""
    return max(parent_timestamp + 1, int(now_seconds))


@dataclass(frozen=True)
class Transaction:
    id: str
    sender: str
    recipient: str
    amount: int


def conflicts(a: Transaction, b: Transaction, sender_balance: int) -> bool:
    """Two spends conflict when they share a sender and together overdraw its balance."""
    return a.sender == b.sender and a.amount + b.amount > sender_balance


@dataclass(frozen=True)
class Block:
    id: str
    parent: Optional[str]
    number: int
    timestamp: int
    difficulty: int
    miner: str
    uncles: Tuple[str, ...] = ()
    transactions: Tuple[str, ...] = ()

    @property
    def is_genesis(self) -> bool:
        return self.parent is None


def make_genesis(difficulty: int, timestamp: int = 0, block_id: str = "genesis") -> Block:
    return Block(block_id, None, 0, timestamp, difficulty, "-")


@dataclass
class BlockTree:
    """One node's view of the block tree.

    With ``validate=True`` every inserted block is checked against the
    height, timestamp, difficulty and uncle rules; simulation trees skip the
    check since the miner constructs blocks through the same functions.
    """

    genesis: Block
    params: HomesteadParams = HOMESTEAD
    validate: bool = False
    blocks: Dict[str, Block] = field(default_factory=dict, init=False)
    children: Dict[str, List[str]] = field(default_factory=dict, init=False)
    total_difficulty: Dict[str, int] = field(default_factory=dict, init=False)
    arrival: Dict[str, int] = field(default_factory=dict, init=False)
    head: str = field(default="", init=False)
    _tx_blocks: Dict[str, List[str]] = field(default_factory=dict, init=False)

    def __post_init__(self) -> None:
        if not self.genesis.is_genesis or self.genesis.number != 0:
            raise ChainError("genesis must have no parent and number 0")
        if self.genesis.difficulty <= 0:
            raise ChainError("genesis difficulty must be positive")
        g = self.genesis
        self.blocks[g.id] = g
        self.children[g.id] = []
        self.total_difficulty[g.id] = g.difficulty
        self.arrival[g.id] = 0
        self.head = g.id
        for tx in g.transactions:
            self._tx_blocks.setdefault(tx, []).append(g.id)

    def __contains__(self, block_id: object) -> bool:
        return block_id in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, block_id: str) -> Block:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise ChainError(f"unknown block {block_id!r}") from None

    @property
    def head_block(self) -> Block:
        return self.blocks[self.head]

    def add(self, block: Block) -> bool:
        """Insert ``block`` and return True if the canonical head changed.

        The parent must already be present; duplicates are ignored.
        """
        if block.id in self.blocks:
            return False
        if block.parent is None or block.parent not in self.blocks:
            raise ChainError(f"parent {block.parent!r} of {block.id!r} is not in the tree")
        parent = self.blocks[block.parent]
        if self.validate:
            self._check(block, parent)
        self.blocks[block.id] = block
        self.children[block.id] = []
        self.children[parent.id].append(block.id)
        td = self.total_difficulty[parent.id] + block.difficulty
        self.total_difficulty[block.id] = td
        self.arrival[block.id] = len(self.arrival)
        for tx in block.transactions:
            self._tx_blocks.setdefault(tx, []).append(block.id)
        # the head is always a max-TD leaf; a later arrival only wins on strictly more work
        if td > self.total_difficulty[self.head]:
            self.head = block.id
            return True
        return False

    def _check(self, block: Block, parent: Block) -> None:
        if block.number != parent.number + 1:
            raise ChainError(f"{block.id}: number {block.number} != parent number + 1")
        if block.timestamp <= parent.timestamp:
            raise ChainError(f"{block.id}: timestamp does not increase over parent")
        expected = compute_difficulty(
            parent.difficulty, block.timestamp - parent.timestamp, block.number, self.params
        )
        if block.difficulty != expected:
            raise ChainError(f"{block.id}: difficulty {block.difficulty} != {expected}")
        if len(block.uncles) > self.params.max_uncles:
            raise ChainError(f"{block.id}: more than {self.params.max_uncles} uncles")
        if len(set(block.uncles)) != len(block.uncles):
            raise ChainError(f"{block.id}: duplicate uncle reference")
        allowed = set(self.eligible_uncles(parent.id))
        for uncle in block.uncles:
            if uncle not in allowed:
                raise ChainError(f"{block.id}: {uncle!r} is not an eligible uncle")

    def total_difficulty_of(self, block_id: str) -> int:
        try:
            return self.total_difficulty[block_id]
        except KeyError:
            raise ChainError(f"unknown block {block_id!r}") from None

    def leaves(self) -> List[str]:
        return [b for b, kids in self.children.items() if not kids]

    def select_canonical_head(self) -> str:
        """Full scan: the max total-difficulty leaf, earliest arrival on ties."""
        return min(self.leaves(), key=lambda b: (-self.total_difficulty[b], self.arrival[b]))

    def ancestors(self, block_id: str) -> Iterator[Block]:
        """Yield ``block_id`` and then each ancestor down to genesis."""
        block: Optional[Block] = self[block_id]
        while block is not None:
            yield block
            block = self.blocks[block.parent] if block.parent is not None else None

    def canonical_chain(self) -> List[Block]:
        """Canonical chain from genesis to head."""
        return list(self.ancestors(self.head))[::-1]

    def canonical_at(self, number: int) -> Optional[str]:
        head = self.head_block
        if number > head.number or number < 0:
            return None
        for block in self.ancestors(self.head):
            if block.number == number:
                return block.id
        return None

    def is_canonical(self, block_id: str) -> bool:
        block = self[block_id]
        return self.canonical_at(block.number) == block_id

    def eligible_uncles(self, parent_id: str) -> List[str]:
        """Stale blocks a child of ``parent_id`` may reference, oldest first.

        An uncle must be a sibling of one of the new block's ancestors two to
        ``uncle_window`` generations back, must not itself be an ancestor and
        must not already be referenced inside that window.
        """
        window: List[Block] = []
        for block in self.ancestors(parent_id):
            window.append(block)
            if len(window) == self.params.uncle_window:
                break
        ancestor_ids = {b.id for b in window}
        used = {u for b in window for u in b.uncles}
        candidates = []
        # window[0] is the parent; its other children are siblings of the new block
        for ancestor in window[1:]:
            for child in self.children[ancestor.id]:
                if child not in ancestor_ids and child not in used:
                    candidates.append(child)
        candidates.sort(key=lambda b: (self.blocks[b].number, self.arrival[b]))
        return candidates

    def blocks_with_tx(self, tx_id: str) -> List[str]:
        return list(self._tx_blocks.get(tx_id, ()))

    def confirmations(self, tx_id: str) -> int:
        """1 + (head height - containing height) for a canonical inclusion, else 0."""
        head = self.head_block
        for block_id in self._tx_blocks.get(tx_id, ()):
            if self.is_canonical(block_id):
                return head.number - self.blocks[block_id].number + 1
        return 0

    def canonical_transactions(self, head: Optional[str] = None) -> List[str]:
        txs: List[str] = []
        for block in self.ancestors(head or self.head):
            txs.extend(block.transactions)
        return txs

    def dumps(self) -> str:
        """Line-oriented dump in arrival order; see :func:`loads_tree`."""
        lines = ["# id parent number timestamp difficulty miner uncles txs"]
        for block_id in sorted(self.blocks, key=self.arrival.__getitem__):
            b = self.blocks[block_id]
            lines.append(
                " ".join(
                    [
                        b.id,
                        b.parent or "-",
                        str(b.number),
                        str(b.timestamp),
                        str(b.difficulty),
                        b.miner,
                        ",".join(b.uncles) or "-",
                        ",".join(b.transactions) or "-",
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def _parse_block_line(line: str) -> Block:
    parts = line.split()
    if len(parts) != 8:
        raise ChainError(f"expected 8 fields, got {len(parts)}: {line!r}")
    bid, parent, number, ts, diff, miner, uncles, txs = parts
    return Block(
        bid,
        None if parent == "-" else parent,
        int(number),
        int(ts),
        int(diff),
        miner,
        tuple(uncles.split(",")) if uncles != "-" else (),
        tuple(txs.split(",")) if txs != "-" else (),
    )


def loads_tree(text: str, params: HomesteadParams = HOMESTEAD, validate: bool = False) -> BlockTree:
    blocks = [
        _parse_block_line(line)
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not blocks:
        raise ChainError("empty block tree dump")
    tree = BlockTree(blocks[0], params=params, validate=validate)
    for block in blocks[1:]:
        tree.add(block)
    return tree


def spent_by(tree: BlockTree, txs: Mapping[str, Transaction], sender: str, head: Optional[str] = None) -> int:
    """Total amount ``sender`` has spent on the chain ending at ``head``."""
    return sum(
        txs[t].amount for t in tree.canonical_transactions(head) if t in txs and txs[t].sender == sender
    )


def includable(
    tree: BlockTree,
    parent_id: str,
    pending: Sequence[str],
    txs: Mapping[str, Transaction],
    balances: Mapping[str, int],
) -> List[str]:
    """Pending transactions that can go into a child of ``parent_id`` without overdrawing."""
    if not pending:
        return []
    on_chain = set(tree.canonical_transactions(parent_id))
    spent: Dict[str, int] = {}
    for t in on_chain:
        tx = txs.get(t)
        if tx is not None:
            spent[tx.sender] = spent.get(tx.sender, 0) + tx.amount
    chosen = []
    for t in pending:
        if t in on_chain:
            continue
        tx = txs[t]
        total = spent.get(tx.sender, 0) + tx.amount
        if total <= balances.get(tx.sender, 0):
            spent[tx.sender] = total
            chosen.append(t)
    return chosen
