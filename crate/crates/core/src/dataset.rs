//! Training data: an immutable table of feature rows in `[0,1]^p` with one
//! real response per row, plus the sampler that draws it from an additive
//! model.
//!
//! File format (delimited text):
//!
//! ```text
//! n,p,sigma,seed
//! 500,2,1.0000000000000000e-1,42
//! x1,...,xp,y                      <- one row per sample, 17 significant digits
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::io_util::{format_f64, write_atomic};
use crate::model::AdditiveModel;
use crate::rng::{self, STREAM_FEATURES, STREAM_NOISE};

/// Where a dataset came from, carried through save/load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    n: usize,
    p: usize,
    features: Vec<f64>, // row-major, n * p
    responses: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(n: usize, p: usize, features: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::validation("dataset must have n >= 1 and p >= 1"));
        }
        if features.len() != n * p || responses.len() != n {
            return Err(Error::validation("dataset dimensions do not match the data"));
        }
        for (i, row) in features.chunks(p).enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Validation(format!(
                        "feature out of [0,1] at row {}, column {}: {x}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if let Some(i) = responses.iter().position(|y| !y.is_finite()) {
            return Err(Error::Validation(format!("non-finite response at row {}", i + 1)));
        }
        Ok(Dataset { n, p, features, responses, provenance: None })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    pub fn response(&self, i: usize) -> f64 {
        self.responses[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Draw a dataset from the model: rows i.i.d. uniform on `[0,1]^p`,
    /// responses `m(X_i) + sigma * eps_i` with standard Gaussian `eps`.
    ///
    /// Features and noise read separate streams of `seed`, so datasets drawn
    /// with different `noise_sigma` share the exact same feature matrix.
    /// Gaussian draws use the inverse transform `Phi^-1(u)` on the documented
    /// open-interval uniform, for cross-implementation reproducibility.
    pub fn sample(model: &AdditiveModel, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("cannot sample an empty dataset"));
        }
        model.validate()?;
        let p = model.p;

        let mut feat_rng = rng::stream(seed, STREAM_FEATURES);
        let mut features = Vec::with_capacity(n * p);
        for _ in 0..n * p {
            features.push(feat_rng.gen::<f64>());
        }

        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut noise_rng = rng::stream(seed, STREAM_NOISE);
        let mut responses = Vec::with_capacity(n);
        for i in 0..n {
            let x = &features[i * p..(i + 1) * p];
            let eps = normal.inverse_cdf(rng::unit_open(&mut noise_rng));
            responses.push(model.eval(x) + model.noise_sigma * eps);
        }

        let mut ds = Dataset::new(n, p, features, responses)?;
        ds.provenance = Some(Provenance { sigma: model.noise_sigma, seed });
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let prov = self.provenance.unwrap_or(Provenance { sigma: f64::NAN, seed: 0 });
        let mut out = String::new();
        out.push_str("n,p,sigma,seed\n");
        out.push_str(&format!("{},{},{},{}\n", self.n, self.p, format_f64(prov.sigma), prov.seed));
        for i in 0..self.n {
            let mut fields: Vec<String> = self.row(i).iter().map(|&x| format_f64(x)).collect();
            fields.push(format_f64(self.response(i)));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_delimited(&text)
    }

    pub fn from_delimited(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();

        let (line_no, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
        if header.trim() != "n,p,sigma,seed" {
            return Err(Error::Parse {
                line: line_no + 1,
                message: format!("expected header 'n,p,sigma,seed', got '{header}'"),
            });
        }

        let (line_no, meta) = lines
            .next()
            .ok_or(Error::Parse { line: 2, message: "missing header values".into() })?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no + 1,
                message: format!("expected 4 header values, got {}", fields.len()),
            });
        }
        let parse_err = |line: usize, what: &str, raw: &str| Error::Parse {
            line,
            message: format!("cannot parse {what} from '{raw}'"),
        };
        let n: usize = fields[0].trim().parse().map_err(|_| parse_err(line_no + 1, "n", fields[0]))?;
        let p: usize = fields[1].trim().parse().map_err(|_| parse_err(line_no + 1, "p", fields[1]))?;
        let sigma: f64 =
            fields[2].trim().parse().map_err(|_| parse_err(line_no + 1, "sigma", fields[2]))?;
        let seed: u64 =
            fields[3].trim().parse().map_err(|_| parse_err(line_no + 1, "seed", fields[3]))?;

        let mut features = Vec::with_capacity(n * p);
        let mut responses = Vec::with_capacity(n);
        let mut rows = 0usize;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != p + 1 {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {} columns, got {}", p + 1, fields.len()),
                });
            }
            for (j, raw) in fields.iter().enumerate() {
                let v: f64 = raw.trim().parse().map_err(|_| parse_err(idx + 1, "value", raw))?;
                if j < p {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Validation(format!(
                            "feature out of [0,1] at row {}, column {}: {v}",
                            rows + 1,
                            j + 1
                        )));
                    }
                    features.push(v);
                } else {
                    responses.push(v);
                }
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                line: rows + 3,
                message: format!("header declares n = {n} but found {rows} rows"),
            });
        }
        let mut ds = Dataset::new(n, p, features, responses)?;
        if sigma.is_finite() {
            ds.provenance = Some(Provenance { sigma, seed });
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Component;

    fn linear_1d(sigma: f64) -> AdditiveModel {
        AdditiveModel::new(1, 1, sigma, vec![Component::Linear { slope: 1.0, intercept: 0.0 }])
            .unwrap()
    }

    #[test]
    fn noiseless_responses_equal_the_regression_function() {
        let model = linear_1d(0.0);
        let ds = Dataset::sample(&model, 100, 9).unwrap();
        for i in 0..ds.n() {
            assert_eq!(ds.response(i), model.eval(ds.row(i)));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = linear_1d(0.5);
        let a = Dataset::sample(&model, 50, 123).unwrap();
        let b = Dataset::sample(&model, 50, 123).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.responses, b.responses);
    }

    #[test]
    fn changing_sigma_keeps_the_feature_matrix() {
        let a = Dataset::sample(&linear_1d(0.1), 50, 7).unwrap();
        let b = Dataset::sample(&linear_1d(2.0), 50, 7).unwrap();
        assert_eq!(a.features, b.features);
        assert_ne!(a.responses, b.responses);
    }

    #[test]
    fn pure_noise_moments() {
        let model = AdditiveModel::new(1, 0, 1.0, vec![]).unwrap();
        let n = 100_000;
        let ds = Dataset::sample(&model, n, 11).unwrap();
        let mean: f64 = ds.responses().iter().sum::<f64>() / n as f64;
        let var: f64 =
            ds.responses().iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.03, "var = {var}");
    }

    #[test]
    fn additive_mean_is_one_for_x1_plus_x2() {
        let model = AdditiveModel::new(
            2,
            2,
            0.0,
            vec![
                Component::Linear { slope: 1.0, intercept: 0.0 },
                Component::Linear { slope: 1.0, intercept: 0.0 },
            ],
        )
        .unwrap();
        let n = 100_000;
        let ds = Dataset::sample(&model, n, 5).unwrap();
        let mean: f64 = ds.responses().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn feature_columns_are_uncorrelated_and_uniform() {
        let model = AdditiveModel::new(3, 0, 0.0, vec![]).unwrap();
        let n = 100_000;
        let ds = Dataset::sample(&model, n, 31).unwrap();
        // pairwise correlations
        for a in 0..3 {
            for b in (a + 1)..3 {
                let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    let (xa, xb) = (ds.row(i)[a], ds.row(i)[b]);
                    sa += xa;
                    sb += xb;
                    sab += xa * xb;
                    saa += xa * xa;
                    sbb += xb * xb;
                }
                let nf = n as f64;
                let cov = sab / nf - (sa / nf) * (sb / nf);
                let corr = cov / ((saa / nf - (sa / nf).powi(2)).sqrt()
                    * (sbb / nf - (sb / nf).powi(2)).sqrt());
                assert!(corr.abs() < 0.02, "corr({a},{b}) = {corr}");
            }
        }
        // per-coordinate Kolmogorov-Smirnov against U[0,1] on a fresh n = 10^4 draw
        let ds = Dataset::sample(&model, 10_000, 77).unwrap();
        for j in 0..3 {
            let mut xs: Vec<f64> = (0..ds.n()).map(|i| ds.row(i)[j]).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = xs.len() as f64;
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let lo = (x - i as f64 / m).abs();
                    let hi = ((i as f64 + 1.0) / m - x).abs();
                    lo.max(hi)
                })
                .fold(0.0f64, f64::max);
            // 1% critical value ~ 1.63 / sqrt(n)
            assert!(ks < 1.63 / m.sqrt(), "KS({j}) = {ks}");
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let model = linear_1d(0.3);
        let ds = Dataset::sample(&model, 40, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(ds.features, back.features);
        assert_eq!(ds.responses, back.responses);
        assert_eq!(ds.provenance, back.provenance);
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let err = Dataset::from_delimited("a,b,c\n1,1,0,0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn out_of_range_feature_names_row_and_column() {
        let text = "n,p,sigma,seed\n2,2,0.0,0\n0.5,0.5,1.0\n0.5,1.2,1.0\n";
        let err = Dataset::from_delimited(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
    }

    #[test]
    fn row_count_mismatch_is_reported() {
        let text = "n,p,sigma,seed\n3,1,0.0,0\n0.5,1.0\n";
        assert!(Dataset::from_delimited(text).is_err());
    }
}
