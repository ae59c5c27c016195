#!/usr/bin/env python3
"""
Script de arranque para la CLI MCR
Uso: python run.py <subcomando> [flags]
"""
import sys

from app.main import main

if __name__ == "__main__":
    sys.exit(main())
