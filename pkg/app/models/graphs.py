from typing import Optional

from pydantic import BaseModel, Field, model_validator

from app.services.graphs import Graph


class GraphIn(BaseModel):
    """Un grafo como lista de aristas ``[u, v]`` o ``[u, v, edge_type]``."""

    n: int = Field(..., ge=0)
    edges: list[list[int]] = Field(default_factory=list)
    node_types: Optional[list[int]] = None

    @model_validator(mode="after")
    def _check_edges(self) -> "GraphIn":
        for edge in self.edges:
            if len(edge) not in (2, 3):
                raise ValueError(f"edge {edge} must be [u, v] or [u, v, edge_type]")
            if not (0 <= edge[0] < self.n and 0 <= edge[1] < self.n) or edge[0] == edge[1]:
                raise ValueError(f"edge {edge} is invalid for {self.n} nodes")
        if self.node_types is not None and len(self.node_types) != self.n:
            raise ValueError(f"node_types has {len(self.node_types)} entries for {self.n} nodes")
        return self

    def to_graph(self) -> Graph:
        return Graph.from_edges(self.n, [tuple(e) for e in self.edges], node_attrs=self.node_types)


class GraphSetsIn(BaseModel):
    generated: list[GraphIn] = Field(..., min_length=1)
    reference: list[GraphIn] = Field(..., min_length=1)


class MetricsOut(BaseModel):
    degree_mmd: float
    clustering_mmd: float
    orbit_mmd: float


class RecallOut(BaseModel):
    recall: float
    generated: int
    reference: int
