# Aplicación MCR
