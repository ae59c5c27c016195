# Núcleo de la aplicación: configuración y excepciones
