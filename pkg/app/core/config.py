"""
Configuración de la aplicación MCR
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """Configuración ambiental de la aplicación"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Información de la aplicación
    APP_NAME: str = Field(default="MCR Object Removal", description="Nombre de la aplicación")
    APP_VERSION: str = Field(default="1.0.0", description="Versión de la aplicación")
    DESCRIPTION: str = Field(
        default="Regularización de consistencia de máscara para eliminación de objetos con difusión",
        description="Descripción de la aplicación"
    )

    # Logging
    LOG_LEVEL: str = Field(default="INFO", description="Nivel de logging")
    LOG_FORMAT: str = Field(
        default="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        description="Formato de los mensajes de logging"
    )

    # Valores por defecto de la CLI
    DEFAULT_SAMPLE_STEPS: int = Field(default=20, description="Pasos de inferencia del muestreador")
    DEFAULT_CORPUS_SEED: int = Field(default=0, description="Semilla por defecto del corpus")


# Instancia global de configuración
settings = Settings()


def get_settings() -> Settings:
    """Obtener configuración de la aplicación"""
    return settings
