"""T5 configurations on polyconvex gradient graphs."""
