use serde::{Deserialize, Serialize};

use super::MedihallError;
use crate::scalar::{mean, Scalar};

/// One clinician's counts of faithful, comprehensive and fluent results
/// out of `num_data` evaluated reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalTally {
    pub clinician_id: String,
    pub num_faith: u64,
    pub num_com: u64,
    pub num_flu: u64,
    pub num_data: u64,
}

impl HumanEvalTally {
    pub fn new(clinician_id: impl Into<String>, faith: u64, com: u64, flu: u64, data: u64) -> Self {
        HumanEvalTally {
            clinician_id: clinician_id.into(),
            num_faith: faith,
            num_com: com,
            num_flu: flu,
            num_data: data,
        }
    }

    /// `(faith + com + flu) / (3 * data)`.
    pub fn score<T: Scalar>(&self) -> Result<T, MedihallError> {
        if self.num_data == 0 {
            return Err(MedihallError::BadTally(format!("{}: num_data is 0", self.clinician_id)));
        }
        for (name, v) in [("num_faith", self.num_faith), ("num_com", self.num_com), ("num_flu", self.num_flu)] {
            if v > self.num_data {
                return Err(MedihallError::BadTally(format!(
                    "{}: {name} = {v} exceeds num_data = {}",
                    self.clinician_id, self.num_data
                )));
            }
        }
        let numer = (self.num_faith + self.num_com + self.num_flu) as i64;
        let denom = 3 * self.num_data as i64;
        Ok(T::ratio(numer, denom))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanScoreReport<T> {
    pub per_clinician: Vec<(String, T)>,
    pub mean: T,
}

pub fn human_score<T: Scalar>(tallies: &[HumanEvalTally]) -> Result<HumanScoreReport<T>, MedihallError> {
    let per_clinician = tallies
        .iter()
        .map(|t| Ok((t.clinician_id.clone(), t.score::<T>()?)))
        .collect::<Result<Vec<_>, MedihallError>>()?;
    let scores: Vec<T> = per_clinician.iter().map(|(_, s)| *s).collect();
    let mean = mean(&scores).ok_or_else(|| MedihallError::BadTally("no tallies".into()))?;
    Ok(HumanScoreReport { per_clinician, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn worked_example() {
        let t = HumanEvalTally::new("c1", 120, 100, 140, 200);
        assert_eq!(t.score::<f64>().unwrap(), 0.6);
        assert_eq!(t.score::<Ratio<i64>>().unwrap(), Ratio::new(3, 5));
    }

    #[test]
    fn boundary_cases() {
        assert_eq!(HumanEvalTally::new("c", 0, 0, 0, 7).score::<f64>().unwrap(), 0.0);
        assert_eq!(HumanEvalTally::new("c", 7, 7, 7, 7).score::<f64>().unwrap(), 1.0);
    }

    #[test]
    fn invalid_tallies() {
        assert!(HumanEvalTally::new("c", 0, 0, 0, 0).score::<f64>().is_err());
        assert!(HumanEvalTally::new("c", 8, 0, 0, 7).score::<f64>().is_err());
        assert!(human_score::<f64>(&[]).is_err());
    }

    #[test]
    fn mean_over_clinicians() {
        let r = human_score::<f64>(&[HumanEvalTally::new("a", 10, 10, 10, 10), HumanEvalTally::new("b", 0, 0, 0, 10)])
            .unwrap();
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.per_clinician[0], ("a".to_string(), 1.0));
    }
}
