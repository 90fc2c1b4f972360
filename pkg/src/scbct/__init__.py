"""Physics-based synthetic CBCT generation and evaluation."""
