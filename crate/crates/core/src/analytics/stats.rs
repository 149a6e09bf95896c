//! Aggregations and closed-form least squares.

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::schema::RecordPayload;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Count,
    Sum,
    Mean,
}

impl Canonical for StatKind {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u8(match self {
            Self::Count => 0,
            Self::Sum => 1,
            Self::Mean => 2,
        });
    }
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Self::Count),
            1 => Ok(Self::Sum),
            2 => Ok(Self::Mean),
            tag => Err(DecodeError::InvalidTag {
                what: "stat kind",
                tag,
            }),
        }
    }
}

impl std::str::FromStr for StatKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count" => Ok(Self::Count),
            "sum" => Ok(Self::Sum),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown stat kind `{other}`")),
        }
    }
}

fn field_values(records: &[RecordPayload], field: &str) -> Result<Vec<f64>, EvalError> {
    records
        .iter()
        .map(|r| {
            r.numeric(field)
                .ok_or_else(|| EvalError::UnknownField(field.to_owned()))
        })
        .collect()
}

/// `count` ignores `field`; `sum` of no records is 0; `mean` of no records
/// is an error.
pub fn stat(records: &[RecordPayload], kind: StatKind, field: &str) -> Result<f64, EvalError> {
    match kind {
        StatKind::Count => Ok(records.len() as f64),
        StatKind::Sum => Ok(field_values(records, field)?.iter().sum()),
        StatKind::Mean => {
            let vals = field_values(records, field)?;
            if vals.is_empty() {
                return Err(EvalError::EmptyInput);
            }
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinregFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: u64,
}

/// Ordinary least squares on centered data.
pub fn linreg_fit(points: &[(f64, f64)]) -> Result<LinregFit, EvalError> {
    let n = points.len();
    if n < 2 {
        return Err(EvalError::Degenerate);
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(EvalError::Degenerate);
    }
    let slope = sxy / sxx;
    Ok(LinregFit {
        slope,
        intercept: mean_y - slope * mean_x,
        n: n as u64,
    })
}

/// Fits `y_field` against `x_field` over the records' numeric views.
pub fn linreg_records(
    records: &[RecordPayload],
    x_field: &str,
    y_field: &str,
) -> Result<LinregFit, EvalError> {
    let xs = field_values(records, x_field)?;
    let ys = field_values(records, y_field)?;
    let points: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
    linreg_fit(&points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(title: &str, engaged: bool) -> RecordPayload {
        RecordPayload::LabeledTitle {
            title: title.into(),
            engaged,
        }
    }

    /// Solves the 2x2 normal equations with raw sums (Cramer's rule).
    fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    }

    #[test]
    fn counts_sums_means() {
        let recs: Vec<_> = (0..5).map(|i| labeled("t", i % 2 == 0)).collect();
        assert_eq!(stat(&recs, StatKind::Count, "").unwrap(), 5.0);
        assert_eq!(stat(&recs, StatKind::Sum, "engaged").unwrap(), 3.0);
        let two = vec![labeled("a b", true), labeled("a b c d", true)];
        assert_eq!(stat(&two, StatKind::Mean, "title.tokens").unwrap(), 3.0);
        assert_eq!(
            stat(&[], StatKind::Mean, "engaged"),
            Err(EvalError::EmptyInput)
        );
        assert_eq!(stat(&[], StatKind::Sum, "engaged").unwrap(), 0.0);
        assert_eq!(
            stat(&recs, StatKind::Sum, "liked"),
            Err(EvalError::UnknownField("liked".into()))
        );
    }

    #[test]
    fn linreg_examples() {
        let pts = [(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)];
        let (oracle_slope, oracle_icpt) = normal_equations(&pts);
        let fit = linreg_fit(&pts).unwrap();
        assert!((fit.slope - oracle_slope).abs() < 1e-9 && (fit.slope - 2.0).abs() < 1e-9);
        assert!((fit.intercept - oracle_icpt).abs() < 1e-9 && (fit.intercept - 1.0).abs() < 1e-9);
        assert_eq!(fit.n, 3);

        let fit = linreg_fit(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert_eq!((fit.slope, fit.intercept), (1.0, 0.0));

        assert_eq!(
            linreg_fit(&[(2.0, 1.0), (2.0, 5.0)]),
            Err(EvalError::Degenerate)
        );
        assert_eq!(linreg_fit(&[(2.0, 1.0)]), Err(EvalError::Degenerate));
    }

    #[test]
    fn linreg_matches_normal_equations_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.gen_range(2..40);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let (s, i) = normal_equations(&pts);
            let fit = linreg_fit(&pts).unwrap();
            assert!((fit.slope - s).abs() < 1e-9 * (1.0 + s.abs()));
            assert!((fit.intercept - i).abs() < 1e-9 * (1.0 + i.abs()));
        }
    }

    #[test]
    fn linreg_over_records() {
        let recs = vec![
            labeled("a", false),
            labeled("a b", true),
            labeled("a b c", true),
        ];
        let fit = linreg_records(&recs, "title.tokens", "engaged").unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
    }
}
