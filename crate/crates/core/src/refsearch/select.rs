use super::module::Reference;
use crate::geometry::ImageSize;
use crate::tracker::{Track, TrackStatus};

/// References for the current frame plus the tracks left to IoU matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSelection {
    pub references: Vec<Reference>,
    /// Active or lost tracks whose center lies outside the image.
    pub flagged: Vec<u64>,
}

/// Active and lost tracks become references at their current center; those
/// centered outside the image are flagged instead.
pub fn select_references(tracks: &[Track], img: ImageSize) -> ReferenceSelection {
    let mut out = ReferenceSelection::default();
    for t in tracks {
        if !matches!(t.status, TrackStatus::Active | TrackStatus::Lost) {
            continue;
        }
        let (cx, cy) = t.center();
        if img.contains(cx, cy) {
            out.references.push(Reference {
                track_id: t.id,
                point: [cx / img.w(), cy / img.h()],
                appearance: t.embedding.clone(),
            });
        } else {
            out.flagged.push(t.id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::kalman::KalmanFilter;

    fn track(id: u64, status: TrackStatus, cx: f64) -> Track {
        let bbox = BBox::from_cxcywh(cx, 50.0, 10.0, 20.0).unwrap();
        Track {
            id,
            status,
            bbox,
            embedding: vec![1.0, 0.0],
            kalman: KalmanFilter::default().init(bbox.cxcywh()),
            lost_age: if status == TrackStatus::Lost { 3 } else { 0 },
            birth_frame: 1,
            last_frame: 1,
            history: Vec::new(),
        }
    }

    fn img() -> ImageSize {
        ImageSize::new(200, 100).unwrap()
    }

    #[test]
    fn status_rule_table() {
        let tracks = [
            track(1, TrackStatus::Active, 10.0),
            track(2, TrackStatus::Active, 20.0),
            track(3, TrackStatus::Lost, 30.0),
            track(4, TrackStatus::Removed, 40.0),
            track(5, TrackStatus::Unconfirmed, 50.0),
        ];
        let s = select_references(&tracks, img());
        let ids: Vec<u64> = s.references.iter().map(|r| r.track_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert!(s.flagged.is_empty());
        assert_eq!(s.references[0].point, [0.05, 0.5]);
    }

    #[test]
    fn out_of_image_center_is_flagged() {
        let tracks = [track(1, TrackStatus::Active, -1.0), track(2, TrackStatus::Lost, 100.0)];
        let s = select_references(&tracks, img());
        assert_eq!(s.references.len(), 1);
        assert_eq!(s.references[0].track_id, 2);
        assert_eq!(s.flagged, vec![1]);
    }
}
