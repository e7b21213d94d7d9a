"""rflabel: simulate, emulate, filter and score localization-derived image labels."""

__version__ = "0.1.0"

from .errors import ConfigError, GeometryError, RFLabelError, SolverError
from .projection import (
    BodyBoxParams,
    BoundingBox,
    CameraModel,
    back_project,
    orientation_for_lookat,
    project_point,
    synthesize_bbox,
)
from .scene import (
    Activity,
    Occluder,
    OptOutPolicy,
    Scene,
    Target,
    TxNode,
    build_scene,
    generate_trajectory,
    position_at,
    scene_to_config,
    street_config,
)
from .ranging import (
    RangingModel,
    RangingSample,
    measure_range,
    model_for_std,
    rss,
    sample_ranging_error,
    sample_signed_ranging_error,
)
from .localization import (
    ErrorConfig,
    LocalizationFix,
    builtin_config,
    calibrate_gamma,
    fix_from_burst,
    sample_localization_error,
    trilaterate,
)
from .labeling import (
    Frame,
    Label,
    Provenance,
    apply_optout,
    classify_activity,
    correlate_identities,
    generate_ground_truth,
    generate_rf_labels,
)
from .emulation import (
    EmulationSpec,
    ErrorMode,
    apply_coverage,
    emulate_noisy_labels,
    inject_extraneous,
    sample_assumed_height,
)
from .quality import (
    FilterCriteria,
    OcclusionEvent,
    OcclusionThresholds,
    QualityReport,
    detect_occlusion,
    filter_labels,
    iou,
    log_average_miss_rate,
    quality_report,
)
from .pipeline import default_occlusion_scenario, run_simulation
