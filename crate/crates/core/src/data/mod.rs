//! Dataset readers, synthetic terrain, raster formats and evaluation
//! metrics.

mod idx;
mod metrics;
mod raster;
mod terrain;

pub use idx::{load_mnist, parse_idx, read_idx, IdxData, MnistSet};
pub use metrics::{eval_metrics, read_metrics_csv, write_metrics_csv, MetricsRecord, CSV_HEADER};
pub use raster::{read_sdem, write_pgm, write_sdem, RasterF32};
pub use terrain::{degrade, gen_terrain, hillshade_prior, HillshadeConfig};
