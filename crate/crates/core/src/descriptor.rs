//! System descriptor files: JSON specifications of a germ sequence (builtin
//! by name or polynomial coordinate maps) together with its splitting
//! (explicit bases, cone field, or eigen-derived).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::catalog::{self, System};
use crate::error::{Error, Result};
use crate::germ::{
    cones_to_splitting, ConeField, DomainBox, Germ, GermSequence, JacFn, MapFn, Splitting,
};

/// One monomial c * x^e of a polynomial coordinate map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Term {
    pub c: f64,
    pub e: Vec<u32>,
}

/// Polynomial map given per output coordinate as a list of monomials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolynomialMap {
    pub coords: Vec<Vec<Term>>,
    pub domain_half_width: f64,
}

/// One entry of the map list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Builtin { builtin: String, #[serde(default)] params: Vec<f64> },
    Polynomial { polynomial: PolynomialMap },
}

/// How the splitting is supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplittingSpec {
    /// "auto-eigen"
    Named(String),
    Explicit {
        explicit: ExplicitBases,
    },
    Cones {
        cones: ConeSpec,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplicitBases {
    /// Columns spanning the expanding subspace.
    pub u: Vec<Vec<f64>>,
    /// Columns spanning the contracting subspace.
    pub s: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeSpec {
    pub u_center: Vec<Vec<f64>>,
    pub u_angle: f64,
    pub s_center: Vec<Vec<f64>>,
    pub s_angle: f64,
}

/// Top-level system descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub dimension: usize,
    pub alpha: f64,
    pub maps: Vec<MapSpec>,
    pub splitting: SplittingSpec,
    #[serde(default)]
    pub rate_bound: Option<f64>,
}

fn columns_to_matrix(d: usize, cols: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(d, cols.len());
    for (j, col) in cols.iter().enumerate() {
        if col.len() != d {
            return Err(Error::Config("basis column has wrong dimension".into()));
        }
        for (i, &v) in col.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn polynomial_germ(d: usize, poly: &PolynomialMap) -> Result<Germ> {
    if poly.coords.len() != d {
        return Err(Error::Config("polynomial map must have one coordinate list per output".into()));
    }
    for terms in &poly.coords {
        for t in terms {
            if t.e.len() != d {
                return Err(Error::Config("monomial exponent vector has wrong length".into()));
            }
        }
    }
    let coords = poly.coords.clone();
    let eval_coords = coords.clone();
    let map: MapFn = Arc::new(move |x: &DVector<f64>| {
        DVector::from_iterator(
            eval_coords.len(),
            eval_coords.iter().map(|terms| {
                terms
                    .iter()
                    .map(|t| {
                        t.c * t
                            .e
                            .iter()
                            .enumerate()
                            .map(|(i, &p)| x[i].powi(p as i32))
                            .product::<f64>()
                    })
                    .sum::<f64>()
            }),
        )
    });
    let jac_coords = coords;
    let jac: JacFn = Arc::new(move |x: &DVector<f64>| {
        let d = jac_coords.len();
        let mut m = DMatrix::zeros(d, d);
        for (row, terms) in jac_coords.iter().enumerate() {
            for t in terms {
                for (col, &p) in t.e.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    let mut val = t.c * p as f64;
                    for (i, &q) in t.e.iter().enumerate() {
                        let q = if i == col { q - 1 } else { q };
                        val *= x[i].powi(q as i32);
                    }
                    m[(row, col)] += val;
                }
            }
        }
        m
    });
    Germ::new(d, map, Some(jac), DomainBox::symmetric(d, poly.domain_half_width))
}

/// Instantiate a descriptor over a window of `n` germs.
pub fn instantiate(desc: &SystemDescriptor, n: usize) -> Result<System> {
    if desc.maps.is_empty() {
        return Err(Error::Config("descriptor has no maps".into()));
    }
    // a single builtin entry carries its own sequence pattern and splitting
    let base = if desc.maps.len() == 1 {
        if let MapSpec::Builtin { builtin, params } = &desc.maps[0] {
            Some(catalog::builtin(builtin, params, n)?)
        } else {
            None
        }
    } else {
        None
    };
    let system = match base {
        Some(sys) => sys,
        None => {
            let germs: Vec<Germ> = (0..n)
                .map(|i| match &desc.maps[i % desc.maps.len()] {
                    MapSpec::Builtin { builtin, params } => {
                        let sys = catalog::builtin(builtin, params, 1)?;
                        Ok(sys.seq.germ(0).clone())
                    }
                    MapSpec::Polynomial { polynomial } => polynomial_germ(desc.dimension, polynomial),
                })
                .collect::<Result<_>>()?;
            let rate = desc.rate_bound.unwrap_or(4.0);
            let seq = GermSequence::new(germs, 0, desc.alpha, rate)?;
            let split = catalog::auto_eigen_splitting(&seq)?;
            System { seq, split }
        }
    };

    let seq = system.seq;
    let split = match &desc.splitting {
        SplittingSpec::Named(name) if name == "auto-eigen" => catalog::auto_eigen_splitting(&seq)?,
        SplittingSpec::Named(name) if name == "builtin" || name == "default" => system.split,
        SplittingSpec::Named(other) => {
            return Err(Error::Config(format!("unknown splitting spec `{other}`")))
        }
        SplittingSpec::Explicit { explicit } => {
            let u = columns_to_matrix(desc.dimension, &explicit.u)?;
            let s = columns_to_matrix(desc.dimension, &explicit.s)?;
            Splitting::constant(seq.first_index(), seq.len() + 1, u, s)?
        }
        SplittingSpec::Cones { cones } => {
            let u = columns_to_matrix(desc.dimension, &cones.u_center)?;
            let s = columns_to_matrix(desc.dimension, &cones.s_center)?;
            let len = seq.len() + 1;
            let field = ConeField {
                first: seq.first_index(),
                u_centers: vec![u; len],
                u_angles: vec![cones.u_angle; len],
                s_centers: vec![s; len],
                s_angles: vec![cones.s_angle; len],
            };
            cones_to_splitting(&seq, &field)?
        }
    };
    Ok(System { seq, split })
}

/// Parse a descriptor from JSON text.
pub fn parse(text: &str) -> Result<SystemDescriptor> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builtin_descriptor_round_trips() {
        let text = r#"{
            "dimension": 2,
            "alpha": 1.0,
            "maps": [{"builtin": "diag_linear", "params": [2.0, 0.5]}],
            "splitting": "builtin"
        }"#;
        let desc = parse(text).unwrap();
        let sys = instantiate(&desc, 3).unwrap();
        assert_eq!(sys.seq.len(), 3);
        assert_eq!(sys.split.u_dim(), 1);
    }

    #[test]
    fn polynomial_descriptor_matches_quad_builtin() {
        let text = r#"{
            "dimension": 2,
            "alpha": 1.0,
            "maps": [{"polynomial": {
                "coords": [
                    [{"c": 2.0, "e": [1, 0]}, {"c": 1.0, "e": [0, 2]}],
                    [{"c": 0.5, "e": [0, 1]}, {"c": 1.0, "e": [2, 0]}]
                ],
                "domain_half_width": 0.35
            }}],
            "splitting": {"explicit": {"u": [[1.0, 0.0]], "s": [[0.0, 1.0]]}},
            "rate_bound": 1.0
        }"#;
        let desc = parse(text).unwrap();
        let sys = instantiate(&desc, 2).unwrap();
        let x = DVector::from_vec(vec![0.1, -0.2]);
        let got = sys.seq.germ(0).eval(&x);
        let want = catalog::quad_hyperbolic_germ().eval(&x);
        assert_relative_eq!((got - want).norm(), 0.0, epsilon = 1e-14);
        let j = sys.seq.germ(1).jacobian(&x);
        assert_relative_eq!(j[(0, 1)], -0.4, epsilon = 1e-12);
        assert_relative_eq!(j[(1, 0)], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn cone_splitting_descriptor() {
        let text = r#"{
            "dimension": 2,
            "alpha": 1.0,
            "maps": [{"builtin": "diag_linear", "params": [2.0, 0.5]}],
            "splitting": {"cones": {
                "u_center": [[1.0, 0.0]], "u_angle": 0.3,
                "s_center": [[0.0, 1.0]], "s_angle": 0.3
            }}
        }"#;
        let desc = parse(text).unwrap();
        let sys = instantiate(&desc, 4).unwrap();
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(crate::linalg::subspace_distance(sys.split.u_basis(0), &e1) < 1e-12);
    }
}
