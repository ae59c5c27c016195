# CLI de MCR
