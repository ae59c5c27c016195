# Utilidades de MCR
