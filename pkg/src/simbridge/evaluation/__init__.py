"""Average precision and experiment harness."""
