from .state import (BoundarySpec, Dirichlet, FarField, Inflow, NoSlipWall,
                    Outflow, Periodic, PlantConfig, StateError, StateVector)
from .plant import Plant, assemble_plant_jacobian

__all__ = ["BoundarySpec", "Dirichlet", "FarField", "Inflow", "NoSlipWall",
           "Outflow", "Periodic", "PlantConfig", "StateError", "StateVector",
           "Plant", "assemble_plant_jacobian"]
