//! Synthetic tomography world: geometry, straight-ray travel times and a
//! drifting sound-speed generator.

mod dataset;
mod forward;
mod generator;
mod geometry;

pub use dataset::{generate_dataset, Dataset, SeriesData, SeriesMeta};
pub use forward::{add_noise, forward, forward_batch, forward_values, ArrivalTimes, SspGrid};
pub use generator::{
    sample_dataset, sample_ssp_series, GeneratorConfig, Split, SspSeries, SSP_BOUNDS,
};
pub use geometry::{
    make_geometry, trace_path, CellIntersections, Geometry, GeometryConfig, PathKind, Position,
};
