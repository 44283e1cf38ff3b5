//! Textbook two-point-flux, backward-Euler residual of the oil-water system
//! on a uniform `nx x ny x nt` grid, written without the library's mesh or
//! assembly code. Derivatives come from dual numbers.

use spacetime_flow::discretization::{StateVector, Well, WellKind};
use spacetime_flow::petrophysics::FluidRockModel;

use super::dual::Dual;

const BETA: f64 = 6.328e-3;

pub struct UniformGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub h: f64,
    pub x0: f64,
    pub y0: f64,
}

impl UniformGrid {
    /// Cell number with x fastest, then y, then time.
    pub fn cell(&self, i: usize, j: usize, n: usize) -> usize {
        (n * self.ny + j) * self.nx + i
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }
}

fn density(rho_ref: f64, p_ref: f64, c_f: f64, p: &Dual) -> Dual {
    p.offset(-p_ref).scale(c_f).exp().scale(rho_ref)
}

fn krw(m: &FluidRockModel, s: &Dual) -> Dual {
    let r = &m.relperm;
    let se = s.offset(-r.s_wirr).scale(1.0 / (1.0 - r.s_wirr - r.s_or));
    if se.v <= 0.0 {
        Dual::constant(0.0, s.g.len())
    } else if se.v >= 1.0 {
        Dual::constant(r.krw0, s.g.len())
    } else {
        se.powf(r.n_w).scale(r.krw0)
    }
}

fn kro(m: &FluidRockModel, s: &Dual) -> Dual {
    let r = &m.relperm;
    let so = s.scale(-1.0).offset(1.0 - r.s_or).scale(1.0 / (1.0 - r.s_wirr - r.s_or));
    if so.v <= 0.0 {
        Dual::constant(0.0, s.g.len())
    } else if so.v >= 1.0 {
        Dual::constant(r.kro0, s.g.len())
    } else {
        so.powf(r.n_o).scale(r.kro0)
    }
}

fn pc(m: &FluidRockModel, s: &Dual) -> Dual {
    let c = &m.capillary;
    let s_wirr = m.relperm.s_wirr;
    let s_eff = if s.v < s_wirr + c.delta_reg { Dual::constant(s_wirr + c.delta_reg, s.g.len()) } else { s.clone() };
    s_eff.offset(-s_wirr).scale(1.0 / (1.0 - s_wirr)).powf(-c.l_cow).scale(c.p_en)
}

struct Props {
    p: Dual,
    s: Dual,
    pc: Dual,
    rho_w: Dual,
    rho_o: Dual,
    krw: Dual,
    kro: Dual,
}

fn props(m: &FluidRockModel, p: Dual, s: Dual) -> Props {
    let pc = pc(m, &s);
    let pw = &p - &pc;
    Props {
        rho_w: density(m.water.rho_ref, m.water.p_ref, m.water.c_f, &pw),
        rho_o: density(m.oil.rho_ref, m.oil.p_ref, m.oil.c_f, &p),
        krw: krw(m, &s),
        kro: kro(m, &s),
        pc,
        p,
        s,
    }
}

/// Peaceman index for an anisotropic cell.
fn well_index(kx: f64, ky: f64, dx: f64, dy: f64, h: f64, rw: f64, skin: f64) -> f64 {
    let a = (ky / kx).sqrt();
    let re = 0.28 * (a * dx * dx + dy * dy / a).sqrt() / ((ky / kx).powf(0.25) + (kx / ky).powf(0.25));
    BETA * 2.0 * std::f64::consts::PI * (kx * ky).sqrt() * h / ((re / rw).ln() + skin)
}

/// Residual `[R_total, R_water]` per cell (cell order of [`UniformGrid::cell`])
/// with its dense Jacobian in the same interleaved `(P, S)` ordering.
pub fn assemble(
    grid: &UniformGrid,
    m: &FluidRockModel,
    wells: &[Well],
    initial: (f64, f64),
    state: &StateVector,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = grid.len();
    let nv = 2 * n;
    let cells: Vec<Props> = (0..n)
        .map(|c| props(m, Dual::variable(state.p(c), 2 * c, nv), Dual::variable(state.s(c), 2 * c + 1, nv)))
        .collect();
    let rock = |i: usize, j: usize| {
        let k = j * grid.nx + i;
        (m.rock.kx[k], m.rock.ky[k], m.rock.phi[k])
    };
    let vol = grid.dx * grid.dy * grid.h;
    let zero = || Dual::constant(0.0, nv);
    let mut rw: Vec<Dual> = (0..n).map(|_| zero()).collect();
    let mut ro: Vec<Dual> = (0..n).map(|_| zero()).collect();

    // Accumulation against the previous time level.
    for t in 0..grid.nt {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = grid.cell(i, j, t);
                let phi = rock(i, j).2;
                let cur = &cells[c];
                let mw = (&cur.rho_w * &cur.s).scale(phi * vol);
                let mo = (&cur.rho_o * &cur.s.scale(-1.0).offset(1.0)).scale(phi * vol);
                let (pw_old, po_old) = if t == 0 {
                    let old = props(m, Dual::constant(initial.0, nv), Dual::constant(initial.1, nv));
                    let w = old.rho_w.v * initial.1;
                    let o = old.rho_o.v * (1.0 - initial.1);
                    (Dual::constant(phi * vol * w, nv), Dual::constant(phi * vol * o, nv))
                } else {
                    let old = &cells[grid.cell(i, j, t - 1)];
                    (
                        (&old.rho_w * &old.s).scale(phi * vol),
                        (&old.rho_o * &old.s.scale(-1.0).offset(1.0)).scale(phi * vol),
                    )
                };
                rw[c] = &rw[c] + &(&mw - &pw_old);
                ro[c] = &ro[c] + &(&mo - &po_old);
            }
        }
    }

    // Fluxes across interior faces, upwinded on the sign of the potential.
    for t in 0..grid.nt {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let a = grid.cell(i, j, t);
                let (kxa, kya, _) = rock(i, j);
                let mut nbrs = Vec::new();
                if i + 1 < grid.nx {
                    let (kxb, _, _) = rock(i + 1, j);
                    let t_face = BETA * grid.dy * grid.h * grid.dt * 2.0 / (grid.dx / kxa + grid.dx / kxb);
                    nbrs.push((grid.cell(i + 1, j, t), t_face, m.gravity[0] * grid.dx));
                }
                if j + 1 < grid.ny {
                    let (_, kyb, _) = rock(i, j + 1);
                    let t_face = BETA * grid.dx * grid.h * grid.dt * 2.0 / (grid.dy / kya + grid.dy / kyb);
                    nbrs.push((grid.cell(i, j + 1, t), t_face, m.gravity[1] * grid.dy));
                }
                for (b, t_face, gdz) in nbrs {
                    let (ca, cb) = (&cells[a], &cells[b]);
                    for water in [true, false] {
                        let (rho_a, rho_b, mu) = if water {
                            (&ca.rho_w, &cb.rho_w, m.water.mu)
                        } else {
                            (&ca.rho_o, &cb.rho_o, m.oil.mu)
                        };
                        let rho = (rho_a + rho_b).scale(0.5);
                        let (pa, pb) = if water { (&ca.p - &ca.pc, &cb.p - &cb.pc) } else { (ca.p.clone(), cb.p.clone()) };
                        let pot = &(&pa - &pb) + &rho.scale(gdz);
                        let kr = match (water, pot.v > 0.0) {
                            (true, true) => &ca.krw,
                            (true, false) => &cb.krw,
                            (false, true) => &ca.kro,
                            (false, false) => &cb.kro,
                        };
                        let flux = (&(&rho * kr) * &pot).scale(t_face / mu);
                        let r = if water { &mut rw } else { &mut ro };
                        r[a] = &r[a] + &flux;
                        r[b] = &r[b] - &flux;
                    }
                }
            }
        }
    }

    // Wells, one completion per time level in the host column.
    for w in wells {
        let i = (((w.x - grid.x0) / grid.dx).floor() as usize).min(grid.nx - 1);
        let j = (((w.y - grid.y0) / grid.dy).floor() as usize).min(grid.ny - 1);
        let (kx, ky, _) = rock(i, j);
        let wi = well_index(kx, ky, grid.dx, grid.dy, grid.h, w.radius, w.skin);
        for t in 0..grid.nt {
            let c = grid.cell(i, j, t);
            match w.kind {
                WellKind::RateInjector { rate } => {
                    rw[c] = rw[c].offset(-rate * m.water.rho_ref * grid.dt);
                }
                WellKind::BhpProducer { bhp } => {
                    let cc = &cells[c];
                    let draw = cc.p.offset(-bhp).scale(wi * grid.dt);
                    let qw = &(&(&cc.rho_w * &cc.krw) * &draw).scale(1.0 / m.water.mu);
                    let qo = &(&(&cc.rho_o * &cc.kro) * &draw).scale(1.0 / m.oil.mu);
                    rw[c] = &rw[c] + qw;
                    ro[c] = &ro[c] + qo;
                }
            }
        }
    }

    let mut r = vec![0.0; nv];
    let mut jac = vec![vec![0.0; nv]; nv];
    for c in 0..n {
        let total = &rw[c] + &ro[c];
        r[2 * c] = total.v;
        r[2 * c + 1] = rw[c].v;
        jac[2 * c] = total.g.clone();
        jac[2 * c + 1] = rw[c].g.clone();
    }
    (r, jac)
}
