"""Origin-destination travel time estimation from large-scale trip data.

Historical trips are bucketed on a raster grid; a query is answered by the
trips whose endpoints fall within a small L1 cell radius of its own, with
each neighbor's duration rescaled by the ratio of learned per-slot average
speeds between the neighbor's departure time and the query's.
"""

__version__ = "0.1.0"

from .core import (
    GeoBoundingBox,
    GeoPoint,
    GridCell,
    ProjectedPoint,
    Query,
    QueryTable,
    TimeSlotConfig,
    Trip,
    TripTable,
    project,
    slot_of,
    to_cell,
)
from .errors import TripTimeError
from .estimator import (
    Estimate,
    LrModel,
    estimate_avg,
    estimate_batch,
    estimate_temp,
    estimate_weighted,
    fit_lr,
    scaling_factor,
)
from .evaluation import (
    MetricReport,
    SplitSpec,
    assumption_report,
    breakdown,
    compute_metrics,
    run_experiment,
)
from .index import (
    GridIndex,
    NeighborSet,
    brute_force_neighbors,
    build_index,
    coverage,
    load_index,
    neighbors,
    save_index,
)
from .ingest import (
    GpsRecord,
    RejectReport,
    TripRecordSchema,
    dataset_stats,
    extract_trips_from_gps,
    load_trips,
)
from .model import OutlierTripFilter, TravelTimeEstimator
from .outliers import (
    FeaturePair,
    OutlierModel,
    fit_outlier_model,
    flag_outliers,
    filter_pipeline,
)
from .regions import RegionPairReference, RegionPartition, build_region_references, lookup_pair
from .speedref import (
    AbsoluteSeries,
    ArimaModel,
    RelativeReference,
    SpeedReference,
    fit_arima,
    fit_reference,
    fit_relative,
    forecast_speed,
    lookup,
    seasonal_difference,
)
from .synthgen import GroundTruth, Hotspot, SynthSpec, generate

__all__ = [name for name in dir() if not name.startswith("_")]
