import logging

from fastapi import APIRouter

from app.api.v1.http_errors import to_http_exception
from app.core.config import EvalConfig
from app.core.errors import SwinGNNError
from app.models.graphs import GraphSetsIn, MetricsOut, RecallOut
from app.services.evaluation import mmd_report, recall_isomorphic

router = APIRouter(prefix="/eval", tags=["Evaluacion"])
logger = logging.getLogger(__name__)


# ==========================
# 🔹 METRICAS MMD
# ==========================
@router.post("/metrics", response_model=MetricsOut)
def metrics(body: GraphSetsIn):
    """
    MMD de grado, clustering y orbitas entre los grafos generados y los de referencia.
    """
    try:
        generated = [g.to_graph() for g in body.generated]
        reference = [g.to_graph() for g in body.reference]
        return mmd_report(generated, reference, EvalConfig())
    except SwinGNNError as exc:
        logger.warning("metrics request failed: %s", exc)
        raise to_http_exception(exc) from exc


# ==========================
# 🔹 RECALL POR ISOMORFISMO
# ==========================
@router.post("/recall", response_model=RecallOut)
def recall(body: GraphSetsIn):
    """
    Fraccion de grafos generados isomorfos a algun grafo de referencia.
    """
    try:
        generated = [g.to_graph() for g in body.generated]
        reference = [g.to_graph() for g in body.reference]
        value = recall_isomorphic(generated, reference)
    except SwinGNNError as exc:
        logger.warning("recall request failed: %s", exc)
        raise to_http_exception(exc) from exc
    return {"recall": value, "generated": len(generated), "reference": len(reference)}
