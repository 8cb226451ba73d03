//! Small numeric helpers.

use num_complex::Complex64 as C64;

/// Neumaier compensated sum of real terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct NSum {
    sum: f64,
    c: f64,
}

impl NSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Compensated sum of complex terms.
#[derive(Clone, Copy, Debug, Default)]
pub struct CSum {
    re: NSum,
    im: NSum,
}

impl CSum {
    pub fn add(&mut self, z: C64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    pub fn value(&self) -> C64 {
        C64::new(self.re.value(), self.im.value())
    }
}

/// Least-squares line through (x, y); returns (intercept, slope).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: C64, poly: &[C64]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.im > p.im) != (b.im > p.im) {
            let x = (b.re - a.re) * (p.im - a.im) / (b.im - a.im) + a.re;
            if p.re < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Signed shoelace area (positive for counter-clockwise polygons).
pub fn shoelace(poly: &[C64]) -> f64 {
    let n = poly.len();
    let mut s = NSum::default();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s.add(a.re * b.im - b.re * a.im);
    }
    0.5 * s.value()
}

pub fn diameter(pts: &[C64]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max((pts[i] - pts[j]).norm());
        }
    }
    d
}

fn orient(a: C64, b: C64, c: C64) -> f64 {
    (b - a).re * (c - a).im - (b - a).im * (c - a).re
}

fn segments_cross(a: C64, b: C64, c: C64, d: C64) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// True if no two non-adjacent edges of the closed polygon cross.
pub fn polygon_is_simple(poly: &[C64]) -> bool {
    let n = poly.len();
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

/// True if the two polygons neither overlap nor contain one another.
pub fn polygons_disjoint(a: &[C64], b: &[C64]) -> bool {
    if a.iter().any(|p| point_in_polygon(*p, b)) || b.iter().any(|p| point_in_polygon(*p, a)) {
        return false;
    }
    for i in 0..a.len() {
        for j in 0..b.len() {
            if segments_cross(a[i], a[(i + 1) % a.len()], b[j], b[(j + 1) % b.len()]) {
                return false;
            }
        }
    }
    true
}

/// Winding number of the closed curve `pts` around `c`.
pub fn winding_number(pts: &[C64], c: C64) -> i64 {
    let mut total = 0.0;
    let n = pts.len();
    for i in 0..n {
        let a = pts[i] - c;
        let b = pts[(i + 1) % n] - c;
        total += (b / a).arg();
    }
    (total / (2.0 * std::f64::consts::PI)).round() as i64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_helpers() {
        let sq = [C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 1.0), C64::new(0.0, 1.0)];
        assert!((shoelace(&sq) - 1.0).abs() < 1e-15);
        assert!(point_in_polygon(C64::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(C64::new(1.5, 0.5), &sq));
        assert!(polygon_is_simple(&sq));
        let bow = [sq[0], sq[2], sq[1], sq[3]];
        assert!(!polygon_is_simple(&bow));
        assert_eq!(winding_number(&sq, C64::new(0.5, 0.5)), 1);
        let far: Vec<C64> = sq.iter().map(|z| z + 3.0).collect();
        assert!(polygons_disjoint(&sq, &far));
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = NSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-14).abs() < 1e-20);
    }
}
