# Modelos de datos de MCR
