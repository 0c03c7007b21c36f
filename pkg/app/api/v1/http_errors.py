from fastapi import HTTPException

from app.core.errors import InvalidInputError, SwinGNNError

# errores del cliente -> 422, divergencias y fallas internas -> 500


def to_http_exception(exc: SwinGNNError) -> HTTPException:
    status = 422 if isinstance(exc, InvalidInputError) else 500
    return HTTPException(status_code=status, detail={"category": exc.category, "message": str(exc)})
