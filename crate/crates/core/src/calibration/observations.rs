use serde::{Deserialize, Serialize};

use crate::nozzle::{nearest_node, Response};
use crate::{Error, Result};

/// Measurements of one response at a set of locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseData {
    pub response: Response,
    /// Locations as requested, before snapping.
    pub requested_x: Vec<f64>,
    /// Grid-node locations actually used.
    pub x: Vec<f64>,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ResponseData {
    /// Snap `locations` to their nearest nodes of `grid`.
    pub fn on_grid(
        response: Response,
        grid: &[f64],
        locations: &[f64],
        values: Vec<f64>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        let nodes: Vec<usize> = locations.iter().map(|&x| nearest_node(grid, x)).collect();
        let data = Self {
            response,
            requested_x: locations.to_vec(),
            x: nodes.iter().map(|&i| grid[i]).collect(),
            nodes,
            values,
            sigma,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.values.len();
        for len in [
            self.requested_x.len(),
            self.x.len(),
            self.nodes.len(),
            self.sigma.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!(
                "{} noise std must be positive, got {s}",
                self.response.name()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "{} observation is not finite",
                self.response.name()
            )));
        }
        Ok(())
    }
}

/// Observations of every calibrated response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub responses: Vec<ResponseData>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.responses.iter().enumerate() {
            r.validate()?;
            if self.responses[..i].iter().any(|o| o.response == r.response) {
                return Err(Error::invalid(format!(
                    "{} observed twice",
                    r.response.name()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, response: Response) -> Option<&ResponseData> {
        self.responses.iter().find(|r| r.response == response)
    }

    pub fn get_mut(&mut self, response: Response) -> Option<&mut ResponseData> {
        self.responses.iter_mut().find(|r| r.response == response)
    }

    pub fn total_len(&self) -> usize {
        self.responses.iter().map(ResponseData::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locations_snap_to_nearest_node() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let d = ResponseData::on_grid(
            Response::Pressure,
            &grid,
            &[0.14, 0.36],
            vec![1.0, 0.9],
            vec![0.01, 0.009],
        )
        .unwrap();
        assert_eq!(d.nodes, vec![1, 4]);
        assert_eq!(d.x, vec![0.1, 0.4]);
        assert_eq!(d.requested_x, vec![0.14, 0.36]);
    }

    #[test]
    fn rejects_non_positive_noise() {
        let grid = [0.0, 0.5, 1.0];
        assert!(
            ResponseData::on_grid(Response::Density, &grid, &[0.5], vec![1.0], vec![0.0]).is_err()
        );
        assert!(
            ResponseData::on_grid(Response::Density, &grid, &[0.5], vec![1.0], vec![]).is_err()
        );
    }
}
