"""Impact-aware STL planning as mixed-integer programs."""
from .scenario import (MODES, Scenario, ScenarioError, SystemSpec, load_scenario, normalize_mode,
                       scenario_from_dict)
from .stl_encode import EncodingError, StlEncoder, TrajView, to_nnf
from .encode import SIGMAS, PlanEncoding
from .plan import (Plan, PlanError, TubeSegment, monitored_robustness, nominal_from_vertices,
                   validate_plan)
from .solve import (ExtractionError, encode_impact_robust, encode_spatially_robust,
                    PlanningError, PlanningInfeasible, PlanningTimeout, extract_plan, plan_scenario)
from .realize import bilinear_weights, realize, tube_excess

__all__ = ["MODES", "Scenario", "ScenarioError", "SystemSpec", "load_scenario", "normalize_mode",
           "scenario_from_dict", "EncodingError", "StlEncoder", "TrajView", "to_nnf", "SIGMAS",
           "PlanEncoding", "Plan", "PlanError", "TubeSegment", "monitored_robustness",
           "nominal_from_vertices", "validate_plan", "ExtractionError", "encode_impact_robust", "encode_spatially_robust", "PlanningError", "PlanningInfeasible",
           "PlanningTimeout", "extract_plan", "plan_scenario", "bilinear_weights", "realize",
           "tube_excess"]
