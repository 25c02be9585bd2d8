"""Replica convergence: LWW-Map CRDT, push gossip and Merkle-tree comparison."""
