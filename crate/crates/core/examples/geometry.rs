//! Overlap measures between oriented boxes.

use stgraph::geometry::{bev_corners, giou_3d, iou_3d, iou_bev};
use stgraph::{BevBox3D, Result};

fn main() -> Result<()> {
    let a = BevBox3D::axis_aligned(0.0, 0.0, 0.0, 1.0, 1.0, 1.0)?;
    let b = BevBox3D::axis_aligned(0.5, 0.0, 0.0, 1.0, 1.0, 1.0)?;
    println!("unit cubes offset 0.5: iou_bev {:.4} iou_3d {:.4} giou {:.4}", iou_bev(&a, &b), iou_3d(&a, &b), giou_3d(&a, &b));

    let car = BevBox3D::new(10.0, 4.0, 0.8, 4.5, 1.9, 1.6, 0.6)?;
    for (label, other) in [
        ("shifted 0.5 m", BevBox3D::new(10.5, 4.0, 0.8, 4.5, 1.9, 1.6, 0.6)?),
        ("rotated 30 deg", BevBox3D::new(10.0, 4.0, 0.8, 4.5, 1.9, 1.6, 0.6 + std::f64::consts::FRAC_PI_6)?),
        ("far away", BevBox3D::new(20.0, 4.0, 0.8, 4.5, 1.9, 1.6, 0.6)?),
    ] {
        println!(
            "{label:>15}: iou_bev {:.4} iou_3d {:.4} giou {:+.4}",
            iou_bev(&car, &other),
            iou_3d(&car, &other),
            giou_3d(&car, &other)
        );
    }
    println!("footprint corners: {:?}", bev_corners(&car).vertices());
    Ok(())
}
