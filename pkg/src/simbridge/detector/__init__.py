"""Domain-aware BEV detector, training loop and checkpoints."""
