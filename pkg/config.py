"""
Runtime settings, read from FRACLAB_* environment variables (a local .env is honoured)
"""
import os

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from services.errors import ConfigError


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    output_dir: str = Field('results', description="Directory for reports and fraclab.log")
    log_level: str = Field('INFO', description="Root logger level")
    jobs: int = Field(1, ge=1, description="Worker threads per experiment")
    node_cap: int = Field(4096, ge=1, description="Largest admissible grid size n^d")
    seed: int = Field(0, ge=0, description="Seed of every random start")

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        values = {
            'output_dir': os.environ.get('FRACLAB_OUTPUT_DIR', 'results'),
            'log_level': os.environ.get('FRACLAB_LOG_LEVEL', 'INFO').upper(),
            'jobs': os.environ.get('FRACLAB_JOBS', '1'),
            'node_cap': os.environ.get('FRACLAB_NODE_CAP', '4096'),
            'seed': os.environ.get('FRACLAB_SEED', '0'),
        }
        try:
            return cls(**values)
        except ValidationError as exc:
            first = exc.errors()[0]
            field = str(first['loc'][0]) if first['loc'] else None
            raise ConfigError(first['msg'], field=f"FRACLAB_{field.upper()}" if field else None) from exc
