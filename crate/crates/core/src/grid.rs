use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }
}

/// Uniform node lattice covering `omega` plus a margin on every side.
///
/// Node `(i, j)` sits at `(x0 + i h, y0 + j h)`; storage is row-major in `j`.
/// The spacing is identical on both axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    omega: Rect,
    nx: usize,
    ny: usize,
    h: f64,
    x0: f64,
    y0: f64,
}

const MIN_NODES: usize = 4;

impl Grid2 {
    /// Grid with `nx` nodes across `omega` widened by `margin` on both sides.
    ///
    /// `ny` follows from the spacing; the vertical extent is centred on `omega`.
    pub fn new(omega: Rect, margin: f64, nx: usize) -> Result<Self> {
        if !(omega.width() > 0.0 && omega.height() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "degenerate domain {omega:?}"
            )));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidParameter(format!("margin {margin}")));
        }
        if nx < MIN_NODES {
            return Err(Error::GridTooSmall {
                need: MIN_NODES,
                got: nx,
            });
        }
        let h = (omega.width() + 2.0 * margin) / (nx - 1) as f64;
        let ny = ((omega.height() + 2.0 * margin) / h).round() as usize + 1;
        if ny < MIN_NODES {
            return Err(Error::GridTooSmall {
                need: MIN_NODES,
                got: ny,
            });
        }
        let x0 = omega.x_min - margin;
        let y0 = omega.center()[1] - 0.5 * (ny - 1) as f64 * h;
        Ok(Self {
            omega,
            nx,
            ny,
            h,
            x0,
            y0,
        })
    }

    /// Grid with spacing `h` whose outermost nodes lie at least `margin` outside `omega`.
    pub fn with_spacing(omega: Rect, margin: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("spacing {h}")));
        }
        let nx = ((omega.width() + 2.0 * margin) / h - 1e-9).ceil() as usize + 1;
        let ny = ((omega.height() + 2.0 * margin) / h - 1e-9).ceil() as usize + 1;
        if nx < MIN_NODES || ny < MIN_NODES {
            return Err(Error::GridTooSmall {
                need: MIN_NODES,
                got: nx.min(ny),
            });
        }
        let c = omega.center();
        Ok(Self {
            omega,
            nx,
            ny,
            h,
            x0: c[0] - 0.5 * (nx - 1) as f64 * h,
            y0: c[1] - 0.5 * (ny - 1) as f64 * h,
        })
    }

    /// Grid from explicit node counts, spacing and origin.
    pub fn from_parts(omega: Rect, nx: usize, ny: usize, h: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < MIN_NODES || ny < MIN_NODES {
            return Err(Error::GridTooSmall {
                need: MIN_NODES,
                got: nx.min(ny),
            });
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("spacing {h}")));
        }
        Ok(Self {
            omega,
            nx,
            ny,
            h,
            x0: origin[0],
            y0: origin[1],
        })
    }

    pub fn omega(&self) -> Rect {
        self.omega
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> [f64; 2] {
        [self.x0, self.y0]
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.h
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x(i), self.y(j)]
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Smallest distance from `omega` to the outermost node line; negative when
    /// the lattice no longer covers `omega`.
    pub fn margin(&self) -> f64 {
        let x_hi = self.x(self.nx - 1);
        let y_hi = self.y(self.ny - 1);
        (self.omega.x_min - self.x0)
            .min(x_hi - self.omega.x_max)
            .min(self.omega.y_min - self.y0)
            .min(y_hi - self.omega.y_max)
    }

    /// Drops `nodes` layers of nodes on every side without resampling.
    pub fn shrink(&self, nodes: usize) -> Result<Self> {
        if self.nx < 2 * nodes + MIN_NODES || self.ny < 2 * nodes + MIN_NODES {
            return Err(Error::GridTooSmall {
                need: 2 * nodes + MIN_NODES,
                got: self.nx.min(self.ny),
            });
        }
        let d = nodes as f64 * self.h;
        Ok(Self {
            omega: self.omega,
            nx: self.nx - 2 * nodes,
            ny: self.ny - 2 * nodes,
            h: self.h,
            x0: self.x0 + d,
            y0: self.y0 + d,
        })
    }

    /// Drops `ceil(amount / h)` layers on every side.
    pub fn shrink_by(&self, amount: f64) -> Result<Self> {
        self.shrink(nodes_for(amount, self.h))
    }

    /// Sub-lattice with the smallest margin that is still `>= margin`.
    pub fn with_margin(&self, margin: f64) -> Result<Self> {
        let excess = self.margin() - margin;
        if excess < -1e-9 * self.h {
            return Err(Error::InsufficientMargin {
                needed: margin,
                available: self.margin(),
            });
        }
        self.shrink(((excess / self.h) + 1e-9).floor().max(0.0) as usize)
    }

    /// Offset `(di, dj)` of `sub`'s first node inside `self`, when `sub` is a
    /// sub-lattice of `self`.
    pub fn offset_of(&self, sub: &Grid2) -> Option<(usize, usize)> {
        if (sub.h - self.h).abs() > 1e-12 * self.h {
            return None;
        }
        let fi = (sub.x0 - self.x0) / self.h;
        let fj = (sub.y0 - self.y0) / self.h;
        let (ri, rj) = (fi.round(), fj.round());
        if (fi - ri).abs() > 1e-6 || (fj - rj).abs() > 1e-6 || ri < 0.0 || rj < 0.0 {
            return None;
        }
        let (di, dj) = (ri as usize, rj as usize);
        if di + sub.nx > self.nx || dj + sub.ny > self.ny {
            return None;
        }
        Some((di, dj))
    }

    /// True when both grids index the same physical nodes.
    pub fn same_nodes(&self, other: &Grid2) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.offset_of(other) == Some((0, 0))
    }

    /// Sub-lattice made of the nodes that lie inside `omega` (margin ~ 0).
    pub fn core(&self) -> Result<Self> {
        self.with_margin(0.0)
    }
}

/// Number of node layers needed to cover `amount` on spacing `h`.
pub fn nodes_for(amount: f64, h: f64) -> usize {
    ((amount / h) - 1e-9).ceil().max(0.0) as usize
}
