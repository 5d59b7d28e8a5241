"""Performance-to-design toolkit for marine propellers.

Subpackages cover the full inverse-design workflow: blade geometry
parameterization, an open-water blade-element-momentum solver, physics-based
dataset synthesis, a neural surrogate for fast performance prediction, two
conditional generative models (cVAE and latent diffusion), evolutionary design
refinement under strength and area constraints, and evaluation metrics.
"""

from propgen.geometry import (
    DESIGN_DIM,
    FEATURES,
    N_STATIONS,
    RADIAL_GRID,
    DesignVector,
    PropellerSpec,
    blade_area_ratio,
    flatten,
    interp_feature,
    is_physical,
    unflatten,
)
from propgen.hydro import (
    DesignBrief,
    OpenWaterCurve,
    OperatingPoint,
    TargetCondition,
    eta_from_coeffs,
    evaluate_curve,
    evaluate_point,
    target_condition,
)
from propgen.datagen import (
    DatasetManifest,
    PcaModel,
    build_dataset,
    load_generative_data,
    load_manifest,
    load_surrogate_data,
    reference_designs,
)
from propgen.surrogate import (
    SurrogateHyper,
    load_surrogate,
    predict,
    save_surrogate,
    train_surrogate,
)
from propgen.cvae import (
    CvaeHyper,
    generate,
    load_cvae,
    save_cvae,
    sweep_beta,
    train_cvae,
)
from propgen.ldm import (
    DiffusionHyper,
    VaeHyper,
    load_diffusion,
    load_latent_vae,
    sample,
    save_diffusion,
    save_latent_vae,
    train_diffusion,
    train_latent_vae,
)
# the refinement driver stays at propgen.refine.refine: re-exporting the
# function here would shadow the submodule of the same name
from propgen.refine import (
    MATERIALS,
    cma_es_minimize,
    min_thickness,
)
from propgen.metrics import (
    build_protocol_conditions,
    condition_match_errors,
    conditional_novelty,
    spread_coefficient,
)

__version__ = "0.1.0"
