//! Normalized center-format boxes and overlap measures.

use serde::{Deserialize, Serialize};

/// Center-format bounding box `(cx, cy, w, h)`, normalized coordinates.
///
/// Model-emitted boxes land in [0,1]^4 through the output squashing
/// activation; the geometry here only assumes `w, h >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Corner representation `(x1, y1, x2, y2)`.
    #[inline]
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Sum of absolute coordinate differences in center format.
    pub fn l1_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).abs()
            + (self.cy - other.cy).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `IoU - |enclosing \ union| / |enclosing|`, in [-1, 1].
///
/// Degenerate rule: if the enclosing box has zero area (both boxes collapsed
/// onto the same point) the value is 0.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    giou_with_grad(a, b).0
}

/// GIoU and its gradient with respect to `a = (cx, cy, w, h)`.
///
/// Piecewise smooth; at min/max ties the one-sided derivative is returned.
pub fn giou_with_grad(a: &BBox, b: &BBox) -> (f64, [f64; 4]) {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();

    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    let overlapping = iw > 0.0 && ih > 0.0;
    let inter = if overlapping { iw * ih } else { 0.0 };

    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    let union = area_a + area_b - inter;

    let ew = ax2.max(bx2) - ax1.min(bx1);
    let eh = ay2.max(by2) - ay1.min(by1);
    let enclose = ew * eh;

    if enclose <= 0.0 {
        // both boxes are the same zero-area point
        return (0.0, [0.0; 4]);
    }
    if union <= 0.0 {
        // two distinct zero-area points: IoU 0, penalty term 1
        return (-1.0, [0.0; 4]);
    }

    let value = inter / union - (enclose - union) / enclose;

    // Derivatives w.r.t. a's corners.
    let mut d_corner = [0.0_f64; 4]; // ax1, ay1, ax2, ay2
    let (di, du, dc);
    {
        // d inter
        let mut d_inter = [0.0_f64; 4];
        if overlapping {
            if ax1 > bx1 {
                d_inter[0] = -ih;
            }
            if ax2 < bx2 {
                d_inter[2] = ih;
            }
            if ay1 > by1 {
                d_inter[1] = -iw;
            }
            if ay2 < by2 {
                d_inter[3] = iw;
            }
        }
        // d area_a
        let d_area = [-(ay2 - ay1), -(ax2 - ax1), ay2 - ay1, ax2 - ax1];
        // d union = d area_a - d inter
        let d_union = [
            d_area[0] - d_inter[0],
            d_area[1] - d_inter[1],
            d_area[2] - d_inter[2],
            d_area[3] - d_inter[3],
        ];
        // d enclose
        let mut d_enc = [0.0_f64; 4];
        if ax1 < bx1 {
            d_enc[0] = -eh;
        }
        if ax2 > bx2 {
            d_enc[2] = eh;
        }
        if ay1 < by1 {
            d_enc[1] = -ew;
        }
        if ay2 > by2 {
            d_enc[3] = ew;
        }
        di = d_inter;
        du = d_union;
        dc = d_enc;
    }
    for k in 0..4 {
        // d[I/U] + d[U/C]  (since giou = I/U - 1 + U/C)
        d_corner[k] = (di[k] * union - inter * du[k]) / (union * union)
            + (du[k] * enclose - union * dc[k]) / (enclose * enclose);
    }

    // Chain corners -> center format: x1 = cx - w/2, x2 = cx + w/2.
    let grad = [
        d_corner[0] + d_corner[2],
        d_corner[1] + d_corner[3],
        0.5 * (d_corner[2] - d_corner[0]),
        0.5 * (d_corner[3] - d_corner[1]),
    ];
    let _ = area_b;
    (value, grad)
}
