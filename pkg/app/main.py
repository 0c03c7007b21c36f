from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api.v1.routes_eval import router as eval_router
from app.api.v1.routes_health import router as health_router
from app.api.v1.routes_theory import router as theory_router
from app.core.config import load_settings
from app.core.logging import configure_logging

settings = load_settings()
configure_logging(settings.log_level)

app = FastAPI(title="SwinGNN graph diffusion")

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(health_router, prefix="/api/v1")
app.include_router(theory_router, prefix="/api/v1")
app.include_router(eval_router, prefix="/api/v1")
