from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

ClassTag = Literal["SmallCar", "Car", "LargeCar", "SUV"]
CLASS_TAGS = ("SmallCar", "Car", "LargeCar", "SUV")


# -------------------------
# Codebook index
# -------------------------

class CodebookIndexEntry(BaseModel):
    id: str = Field(..., description="Entry id; the TSDF lives at <id>.tsdf next to the index")
    latent: List[float] = Field(..., min_length=1, description="Unit latent shape code")
    class_tag: ClassTag
    file: Optional[str] = Field(None, description="TSDF file name when it differs from <id>.tsdf")

    @field_validator("latent")
    @classmethod
    def _non_zero(cls, v: List[float]) -> List[float]:
        if sum(x * x for x in v) <= 1e-24:
            raise ValueError("latent must be non-zero")
        return v


class CodebookIndex(BaseModel):
    entries: List[CodebookIndexEntry] = Field(default_factory=list)


# -------------------------
# Mesh bank metadata
# -------------------------

class MeshBankEntry(BaseModel):
    id: str = Field(..., description="Mesh id; the mesh lives at <id>.ply")
    extents: List[float] = Field(..., min_length=3, max_length=3, description="[w, h, l] meters")
    class_tag: ClassTag = "Car"
    allocentric: Optional[List[float]] = Field(
        None, min_length=4, max_length=4, description="Source allocentric quaternion [w, x, y, z]"
    )

    @field_validator("extents")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if min(v) <= 0:
            raise ValueError("extents must be positive")
        return v


class MeshBankIndex(BaseModel):
    meshes: List[MeshBankEntry] = Field(default_factory=list)
