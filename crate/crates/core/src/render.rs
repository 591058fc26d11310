//! Text renderings of an [`OccupancyMap`]: plain PGM (P2) and CSV.

use std::fmt::Write;

use crate::grid::{GridIndex, OccupancyMap};

/// P2 image with `m_x` columns and `m_y` rows; row 1 is `i_y = 1`.
/// Probabilities are scaled linearly to 0..=255.
pub fn to_pgm(map: &OccupancyMap) -> String {
    let g = &map.geometry;
    let mut out = String::with_capacity(16 + g.n_cells() * 4);
    let _ = writeln!(out, "P2\n{} {}\n255", g.m_x, g.m_y);
    for i_y in 1..=g.m_y {
        let row: Vec<String> = (1..=g.m_x)
            .map(|i_x| {
                let p = map.get(GridIndex::new(i_x, i_y)).clamp(0.0, 1.0);
                ((p * 255.0).round() as u8).to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// One row per cell, `i_x` major, header `i_x,i_y,p`.
pub fn to_csv(map: &OccupancyMap) -> String {
    let mut out = String::from("i_x,i_y,p\n");
    for idx in map.geometry.indices() {
        let _ = writeln!(out, "{},{},{}", idx.i_x, idx.i_y, map.get(idx));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;

    #[test]
    fn pgm_has_one_pixel_per_cell() {
        let mut m = OccupancyMap::zeros(GridGeometry::default());
        m.set(GridIndex::new(36, 1), 1.0);
        m.set(GridIndex::new(1, 21), 0.5);
        let pgm = to_pgm(&m);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("36 21"));
        assert_eq!(lines.next(), Some("255"));
        let rows: Vec<Vec<u32>> = lines
            .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 21);
        assert!(rows.iter().all(|r| r.len() == 36));
        assert_eq!(rows[0][35], 255);
        assert_eq!(rows[20][0], 128);
    }

    #[test]
    fn csv_lists_every_cell() {
        let mut m = OccupancyMap::zeros(GridGeometry::centered(2, 3, 1.0, 1.0).unwrap());
        m.set(GridIndex::new(2, 1), 0.25);
        let csv = to_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i_x,i_y,p");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[4], "2,1,0.25");
    }
}
