from __future__ import annotations
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv
try:
    from pydantic_settings import BaseSettings, SettingsConfigDict
    from pydantic import Field
except ImportError:
    from pydantic import BaseSettings, Field
    SettingsConfigDict = dict

# .env from the project root
ROOT = Path(__file__).resolve().parents[2]
ENV_PATH = ROOT / '.env'
if ENV_PATH.exists():
    load_dotenv(ENV_PATH)
else:
    load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="SFLOW_", case_sensitive=False, extra="ignore")

    # Linear algebra
    hermitian_tol: float = Field(1e-12)
    commutation_tol: float = Field(1e-12)
    unitary_tol: float = Field(1e-10)

    # Vertical line l = {a + iv}
    contour_a: float = Field(0.25)
    contour_v_max: float = Field(200.0)
    contour_rel_tol: float = Field(1e-10)
    contour_max_subdiv: int = Field(400)
    contour_max_extensions: int = Field(6)

    # Half line in s
    half_line_rel_tol: float = Field(1e-9)
    half_line_start: float = Field(8.0)
    half_line_max_doublings: int = Field(30)
    tail_eps: float = Field(0.05)

    # Finite interval in t
    interval_rel_tol: float = Field(1e-9)
    interval_max_subdiv: int = Field(500)

    # Crossing / index engines
    crossing_initial_steps: int = Field(16)
    crossing_max_refinements: int = Field(6)
    edge_mass_threshold: float = Field(0.1)
    kernel_dead_zone_low: float = Field(1e-8)
    kernel_dead_zone_high: float = Field(1e-4)

    # Residues and zeta continuation
    residue_radius: float = Field(0.1)
    residue_tol: float = Field(1e-8)
    residue_max_nodes: int = Field(1024)
    zeta_binomial_terms: int = Field(24)
    zeta_head_terms: int = Field(8)
    zeta_tol: float = Field(1e-13)

    # Sign of the chosen branch of sqrt(2 pi i)
    sqrt_branch_sign: int = Field(1)

    # Runner
    threads: Optional[int] = Field(None)
    log_level: str = Field("INFO")


settings = Settings()  # global instance
