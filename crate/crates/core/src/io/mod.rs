//! File formats: PNM images, PFM scalar grids, Middlebury .flo flows,
//! KITTI-layout pose text files, loss-trace CSVs, scene directories and
//! optimizer checkpoints.

pub mod checkpoint;
pub mod flo;
pub mod pfm;
pub mod pnm;
pub mod poses;
pub mod scene_dir;
pub mod trace;
