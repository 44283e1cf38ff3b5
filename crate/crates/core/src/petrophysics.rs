//! Fluid and rock property functions.
//!
//! Densities follow the slightly compressible exponential law; relative
//! permeability and capillary pressure follow Brooks-Corey. Every function
//! also returns its analytic derivative for the Newton Jacobian.

use crate::error::{Error, Result};
use crate::mesh::LatticeBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Oil,
    Water,
}

/// Reference density (lb/ft^3), reference pressure (psi), compressibility
/// (1/psi) and viscosity (cp) of one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidPhaseParams {
    pub rho_ref: f64,
    pub p_ref: f64,
    pub c_f: f64,
    pub mu: f64,
}

impl FluidPhaseParams {
    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.rho_ref > 0.0) {
            return Err(Error::config(format!("{key}.rho_ref"), "must be positive"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::config(format!("{key}.mu"), "must be positive"));
        }
        if !(self.c_f >= 0.0) {
            return Err(Error::config(format!("{key}.c_f"), "must be non-negative"));
        }
        if !self.p_ref.is_finite() {
            return Err(Error::config(format!("{key}.p_ref"), "must be finite"));
        }
        Ok(())
    }

    /// `rho_ref * exp(c_f (p - p_ref))`.
    pub fn density(&self, p: f64) -> f64 {
        self.rho_ref * (self.c_f * (p - self.p_ref)).exp()
    }

    /// Density and `d rho / d p = c_f rho`.
    pub fn density_with_derivative(&self, p: f64) -> (f64, f64) {
        let rho = self.density(p);
        (rho, self.c_f * rho)
    }
}

/// Brooks-Corey relative permeability parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPermParams {
    pub s_wirr: f64,
    pub s_or: f64,
    pub krw0: f64,
    pub kro0: f64,
    pub n_w: f64,
    pub n_o: f64,
}

impl RelPermParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_wirr >= 0.0) {
            return Err(Error::config("relperm.s_wirr", "must be >= 0"));
        }
        if !(self.s_or >= 0.0) {
            return Err(Error::config("relperm.s_or", "must be >= 0"));
        }
        if !(self.s_wirr + self.s_or < 1.0) {
            return Err(Error::config(
                "relperm.s_wirr",
                format!("s_wirr + s_or = {} must be < 1", self.s_wirr + self.s_or),
            ));
        }
        for (key, v) in [("relperm.krw0", self.krw0), ("relperm.kro0", self.kro0)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(key, "endpoint must be in (0, 1]"));
            }
        }
        for (key, v) in [("relperm.n_w", self.n_w), ("relperm.n_o", self.n_o)] {
            if !(v >= 1.0) {
                return Err(Error::config(key, "exponent must be >= 1"));
            }
        }
        Ok(())
    }

    fn mobile_span(&self) -> f64 {
        1.0 - self.s_or - self.s_wirr
    }

    /// Relative permeability of `phase` at water saturation `s_w`, and its
    /// derivative with respect to `s_w`. Clamped to the endpoints outside the
    /// mobile window with zero derivative there.
    pub fn rel_perm(&self, phase: Phase, s_w: f64) -> (f64, f64) {
        let span = self.mobile_span();
        match phase {
            Phase::Water => {
                let x = (s_w - self.s_wirr) / span;
                if x <= 0.0 {
                    (0.0, 0.0)
                } else if x >= 1.0 {
                    (self.krw0, 0.0)
                } else {
                    let kr = self.krw0 * x.powf(self.n_w);
                    (kr, self.krw0 * self.n_w * x.powf(self.n_w - 1.0) / span)
                }
            }
            Phase::Oil => {
                let x = (1.0 - s_w - self.s_or) / span;
                if x <= 0.0 {
                    (0.0, 0.0)
                } else if x >= 1.0 {
                    (self.kro0, 0.0)
                } else {
                    let kr = self.kro0 * x.powf(self.n_o);
                    (kr, -self.kro0 * self.n_o * x.powf(self.n_o - 1.0) / span)
                }
            }
        }
    }
}

/// Brooks-Corey oil-water capillary pressure `p_c = P_en ((1 - S_wirr)/(S_w - S_wirr))^l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapPressureParams {
    pub p_en: f64,
    pub l_cow: f64,
    pub delta_reg: f64,
}

impl CapPressureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_en >= 0.0) {
            return Err(Error::config("capillary.p_en", "must be >= 0"));
        }
        if !(self.l_cow > 0.0) {
            return Err(Error::config("capillary.l_cow", "must be > 0"));
        }
        if !(self.delta_reg > 0.0) {
            return Err(Error::config("capillary.delta_reg", "must be > 0"));
        }
        Ok(())
    }

    /// Capillary pressure and `d p_c / d S_w`. Saturations below
    /// `s_wirr + delta_reg` are evaluated at that floor (zero derivative).
    pub fn cap_pressure(&self, s_wirr: f64, s_w: f64) -> (f64, f64) {
        let floor = s_wirr + self.delta_reg;
        let (s, active) = if s_w > floor { (s_w, true) } else { (floor, false) };
        let ratio = (1.0 - s_wirr) / (s - s_wirr);
        let pc = self.p_en * ratio.powf(self.l_cow);
        let dpc = if active { -self.l_cow * pc / (s - s_wirr) } else { 0.0 };
        (pc, dpc)
    }
}

/// Upwinded mass mobility `0.5 (rho_L + rho_R) kr(S_up) / mu` across a face.
///
/// `left` and `right` are `(S_w, rho)` pairs. The left state is upstream when
/// `flux_sign > 0`, otherwise the right one is.
pub fn upwind_mobility(
    fluid: &FluidPhaseParams,
    relperm: &RelPermParams,
    phase: Phase,
    left: (f64, f64),
    right: (f64, f64),
    flux_sign: f64,
) -> f64 {
    let s_up = if flux_sign > 0.0 { left.0 } else { right.0 };
    0.5 * (left.1 + right.1) * relperm.rel_perm(phase, s_up).0 / fluid.mu
}

/// Effective rock properties of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RockProps {
    pub kx: f64,
    pub ky: f64,
    pub phi: f64,
}

/// Permeability (md, diagonal) and porosity on the finest spatial grid,
/// stored with `i` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RockField {
    pub nx: usize,
    pub ny: usize,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub phi: Vec<f64>,
}

impl RockField {
    pub fn uniform(nx: usize, ny: usize, k: f64, phi: f64) -> Self {
        let n = nx * ny;
        RockField {
            nx,
            ny,
            kx: vec![k; n],
            ky: vec![k; n],
            phi: vec![phi; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nx * self.ny;
        if n == 0 || self.kx.len() != n || self.ky.len() != n || self.phi.len() != n {
            return Err(Error::config("rock", "field arrays do not match nx * ny"));
        }
        for idx in 0..n {
            let (i, j) = (idx % self.nx, idx / self.nx);
            if !(self.kx[idx] > 0.0 && self.ky[idx] > 0.0) {
                return Err(Error::config("rock", format!("non-positive permeability at ({i}, {j})")));
            }
            if !(self.phi[idx] > 0.0 && self.phi[idx] <= 1.0) {
                return Err(Error::config("rock", format!("porosity out of (0, 1] at ({i}, {j})")));
            }
        }
        Ok(())
    }

    pub fn at(&self, i: usize, j: usize) -> RockProps {
        let idx = i + self.nx * j;
        RockProps {
            kx: self.kx[idx],
            ky: self.ky[idx],
            phi: self.phi[idx],
        }
    }

    /// Upscaled properties over the spatial footprint of a lattice box:
    /// arithmetic mean porosity and per-axis geometric mean permeability.
    pub fn effective(&self, b: &LatticeBox) -> RockProps {
        let (mut lkx, mut lky, mut phi) = (0.0, 0.0, 0.0);
        let mut n = 0usize;
        for j in b.lo[1]..b.hi[1] {
            for i in b.lo[0]..b.hi[0] {
                let p = self.at(i as usize, j as usize);
                lkx += p.kx.ln();
                lky += p.ky.ln();
                phi += p.phi;
                n += 1;
            }
        }
        let n = n as f64;
        RockProps {
            kx: (lkx / n).exp(),
            ky: (lky / n).exp(),
            phi: phi / n,
        }
    }
}

/// Everything the discretisation needs to know about fluids and rock.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidRockModel {
    pub water: FluidPhaseParams,
    pub oil: FluidPhaseParams,
    pub relperm: RelPermParams,
    pub capillary: CapPressureParams,
    pub rock: RockField,
    /// Gravity vector in the (x, y) plane, psi per (lb/ft^3 * ft).
    pub gravity: [f64; 2],
}

impl FluidRockModel {
    pub fn validate(&self) -> Result<()> {
        self.water.validate("fluid.water")?;
        self.oil.validate("fluid.oil")?;
        self.relperm.validate()?;
        self.capillary.validate()?;
        self.rock.validate()
    }

    pub fn phase(&self, phase: Phase) -> &FluidPhaseParams {
        match phase {
            Phase::Oil => &self.oil,
            Phase::Water => &self.water,
        }
    }

    pub fn cap_pressure(&self, s_w: f64) -> (f64, f64) {
        self.capillary.cap_pressure(self.relperm.s_wirr, s_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_relperm() -> RelPermParams {
        RelPermParams {
            s_wirr: 0.2,
            s_or: 0.2,
            krw0: 1.0,
            kro0: 1.0,
            n_w: 2.0,
            n_o: 2.0,
        }
    }

    fn paper_cap() -> CapPressureParams {
        CapPressureParams {
            p_en: 10.0,
            l_cow: 0.2,
            delta_reg: 1e-6,
        }
    }

    #[test]
    fn density_values() {
        let w = FluidPhaseParams {
            rho_ref: 64.0,
            p_ref: 1000.0,
            c_f: 3e-6,
            mu: 0.3,
        };
        assert_eq!(w.density(1000.0), 64.0);
        assert!((w.density(1001.0) - 64.000192).abs() < 1e-6);
        assert!((w.density(1001.0) - 64.0 * (3e-6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn relperm_values() {
        let rp = paper_relperm();
        assert_eq!(rp.rel_perm(Phase::Water, 0.2).0, 0.0);
        assert_eq!(rp.rel_perm(Phase::Water, 0.8).0, 1.0);
        assert!((rp.rel_perm(Phase::Water, 0.5).0 - 0.25).abs() < 1e-15);
        assert!((rp.rel_perm(Phase::Oil, 0.5).0 - 0.25).abs() < 1e-15);
        assert_eq!(rp.rel_perm(Phase::Oil, 0.9), (0.0, 0.0));
        assert_eq!(rp.rel_perm(Phase::Water, 0.05), (0.0, 0.0));
    }

    #[test]
    fn relperm_validation() {
        let mut rp = paper_relperm();
        rp.s_or = 0.8;
        match rp.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "relperm.s_wirr"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cap_pressure_values() {
        let cp = paper_cap();
        assert!((cp.cap_pressure(0.2, 1.0).0 - 10.0).abs() < 1e-12);
        assert!((cp.cap_pressure(0.2, 0.6).0 - 10.0 * 2f64.powf(0.2)).abs() < 1e-12);
        assert!((cp.cap_pressure(0.2, 0.6).0 - 11.487).abs() < 1e-3);
        let floor = cp.cap_pressure(0.2, 0.2 + 1e-6).0;
        assert_eq!(cp.cap_pressure(0.2, 0.1), (floor, 0.0));
        assert!(floor.is_finite());
    }

    #[test]
    fn upwind_selection() {
        let w = FluidPhaseParams {
            rho_ref: 64.0,
            p_ref: 1000.0,
            c_f: 3e-6,
            mu: 0.3,
        };
        let rp = paper_relperm();
        let l = (0.5, 64.0);
        let r = (0.7, 65.0);
        let pos = upwind_mobility(&w, &rp, Phase::Water, l, r, 1.0);
        let neg = upwind_mobility(&w, &rp, Phase::Water, l, r, -1.0);
        let zero = upwind_mobility(&w, &rp, Phase::Water, l, r, 0.0);
        assert!((pos - 64.5 * 0.25 / 0.3).abs() < 1e-12);
        assert_eq!(neg, zero);
        assert_eq!(
            upwind_mobility(&w, &rp, Phase::Water, l, l, 1.0),
            upwind_mobility(&w, &rp, Phase::Water, l, l, -1.0)
        );
        assert_eq!(upwind_mobility(&w, &rp, Phase::Water, (0.2, 64.0), r, 1.0), 0.0);
    }

    #[test]
    fn effective_properties() {
        let mut f = RockField::uniform(2, 2, 100.0, 0.2);
        f.kx[1] = 400.0;
        f.phi[1] = 0.4;
        let b = LatticeBox { lo: [0, 0, 0], hi: [2, 1, 1] };
        let e = f.effective(&b);
        assert!((e.kx - 200.0).abs() < 1e-10);
        assert!((e.ky - 100.0).abs() < 1e-10);
        assert!((e.phi - 0.3).abs() < 1e-15);
        assert!(RockField::uniform(2, 2, 0.0, 0.2).validate().is_err());
    }
}
