//! Two-dimensional views of the code embeddings: exact t-SNE, rank-based
//! coloring by stock attribute, and CSV/SVG scatter export.

mod scatter;
mod tsne;

pub use scatter::{rank_colors, ramp_color, read_scatter_csv, write_scatter_csv, write_scatter_svg, ScatterPoint};
pub use tsne::{group_distances, joint_affinities, kl_divergence, silhouette, tsne, Affinities, TsneOptions, TsneResult};
