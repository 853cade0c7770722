use serde::{Deserialize, Serialize};

use super::SampleRecord;
use crate::geo::{GeoPoint, SamplePoint, Side};

/// Street-view image size requested for every sample, width × height.
pub const IMAGE_SIZE: [u32; 2] = [300, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchRequest {
    pub sample_id: u32,
    pub location: GeoPoint,
    pub heading: f64,
    pub width: u32,
    pub height: u32,
}

/// Ordered image requests for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchPlan {
    pub requests: Vec<FetchRequest>,
}

impl FetchPlan {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Plan for already ingested samples, in id order.
    pub fn from_records(records: &[SampleRecord]) -> Self {
        let requests = records.iter().map(|r| request(r.id, r.location(), r.view_angle_deg)).collect();
        Self { requests }
    }
}

fn request(sample_id: u32, location: GeoPoint, heading: f64) -> FetchRequest {
    FetchRequest { sample_id, location, heading, width: IMAGE_SIZE[0], height: IMAGE_SIZE[1] }
}

/// One request per sample point, ordered by chunk index and then Left
/// before Right. Sample ids follow that order.
pub fn build_fetch_plan(samples: &[SamplePoint]) -> FetchPlan {
    let mut ordered: Vec<&SamplePoint> = samples.iter().collect();
    ordered.sort_by_key(|s| (s.chunk_index, s.side != Side::Left));
    let requests =
        ordered.into_iter().enumerate().map(|(i, s)| request(i as u32, s.location, s.view_angle_deg)).collect();
    FetchPlan { requests }
}
