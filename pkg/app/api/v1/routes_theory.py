import logging
from typing import Optional

from fastapi import APIRouter, Query

from app.api.v1.http_errors import to_http_exception
from app.core.errors import SwinGNNError
from app.models.theory import TheoryReportOut
from app.services.theory_service import report_dict, run_theory_suite

router = APIRouter(prefix="/theory", tags=["Teoria"])
logger = logging.getLogger(__name__)


# ==========================
# 🔹 VERIFICAR TEORIA
# ==========================
@router.get("/verify", response_model=TheoryReportOut)
def verify_theory(group: Optional[list[str]] = Query(None, description="Grupos de chequeos; todos si se omite")):
    """
    Ejecuta los chequeos exactos (contraejemplos, muestreo permutado, identidades EDM).
    """
    try:
        frame = run_theory_suite(group)
    except SwinGNNError as exc:
        logger.warning("theory suite rejected: %s", exc)
        raise to_http_exception(exc) from exc
    return {"passed": bool(frame["passed"].all()), "checks": report_dict(frame)}
