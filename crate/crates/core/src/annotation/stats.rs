use std::collections::BTreeMap;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use super::manifest::{ArtifactType, ContentType, DatasetManifest, Label};

/// Image and artifact-instance counts. Maps always carry every key, zero or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images_by_content_type: BTreeMap<String, usize>,
    pub fake_images_by_content_type: BTreeMap<String, usize>,
    pub regions_by_artifact_type: BTreeMap<String, usize>,
    pub real_images: usize,
    pub fake_images: usize,
    pub total_images: usize,
    pub total_regions: usize,
}

impl Default for DatasetStats {
    fn default() -> Self {
        let content: BTreeMap<_, _> = ContentType::ALL.iter().map(|c| (c.as_str().to_owned(), 0)).collect();
        Self {
            images_by_content_type: content.clone(),
            fake_images_by_content_type: content,
            regions_by_artifact_type: ArtifactType::ALL.iter().map(|a| (a.as_str().to_owned(), 0)).collect(),
            real_images: 0,
            fake_images: 0,
            total_images: 0,
            total_regions: 0,
        }
    }
}

impl DatasetStats {
    pub fn images(&self, c: ContentType) -> usize {
        self.images_by_content_type[c.as_str()]
    }

    pub fn regions(&self, a: ArtifactType) -> usize {
        self.regions_by_artifact_type[a.as_str()]
    }
}

impl Add for DatasetStats {
    type Output = DatasetStats;

    fn add(mut self, rhs: DatasetStats) -> DatasetStats {
        fn merge(a: &mut BTreeMap<String, usize>, b: BTreeMap<String, usize>) {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
        }
        merge(&mut self.images_by_content_type, rhs.images_by_content_type);
        merge(&mut self.fake_images_by_content_type, rhs.fake_images_by_content_type);
        merge(&mut self.regions_by_artifact_type, rhs.regions_by_artifact_type);
        self.real_images += rhs.real_images;
        self.fake_images += rhs.fake_images;
        self.total_images += rhs.total_images;
        self.total_regions += rhs.total_regions;
        self
    }
}

pub fn dataset_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut s = DatasetStats::default();
    for e in &manifest.entries {
        let c = e.content_type.as_str();
        *s.images_by_content_type.get_mut(c).unwrap() += 1;
        match e.label {
            Label::Real => s.real_images += 1,
            Label::Fake => {
                s.fake_images += 1;
                *s.fake_images_by_content_type.get_mut(c).unwrap() += 1;
            }
        }
        for r in &e.regions {
            *s.regions_by_artifact_type.get_mut(r.artifact_type.as_str()).unwrap() += 1;
        }
        s.total_regions += e.regions.len();
    }
    s.total_images = manifest.entries.len();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::manifest::{AnnotatedImage, ArtifactRegion, ImageRef};
    use crate::annotation::polygon::Polygon;

    fn image(id: &str, content_type: ContentType, types: &[ArtifactType]) -> AnnotatedImage {
        AnnotatedImage {
            id: id.into(),
            image: ImageRef::Path(format!("{id}.png")),
            width: 8,
            height: 8,
            label: Label::Fake,
            content_type,
            regions: types
                .iter()
                .map(|&artifact_type| ArtifactRegion {
                    location: "somewhere".into(),
                    polygons: vec![Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])],
                    artifact_type,
                    explanation: "odd".into(),
                })
                .collect(),
            generator: None,
            reference: None,
        }
    }

    #[test]
    fn counts_fixture() {
        use ArtifactType::*;
        let m = DatasetManifest::new(vec![
            image("a", ContentType::Human, &[Structure, Structure]),
            image("b", ContentType::Human, &[Structure, Physics]),
            image("c", ContentType::Human, &[Structure]),
            image("d", ContentType::Scene, &[Distortion]),
        ]);
        let s = dataset_stats(&m);
        assert_eq!(s.images(ContentType::Human), 3);
        assert_eq!(s.images(ContentType::Scene), 1);
        assert_eq!(s.images(ContentType::Object), 0);
        assert_eq!(s.regions(Structure), 4);
        assert_eq!(s.regions(Physics), 1);
        assert_eq!(s.regions(Distortion), 1);
        assert_eq!(s.total_regions, 6);
        assert_eq!(s.total_images, 4);
        assert_eq!(s.images_by_content_type.values().sum::<usize>(), s.total_images);
        assert_eq!(s.regions_by_artifact_type.values().sum::<usize>(), s.total_regions);
    }

    #[test]
    fn empty_manifest_is_all_zero() {
        let s = dataset_stats(&DatasetManifest::default());
        assert_eq!(s, DatasetStats::default());
        assert!(s.images_by_content_type.values().all(|&v| v == 0));
    }

    #[test]
    fn additive_over_concatenation() {
        use ArtifactType::*;
        let a = DatasetManifest::new(vec![image("a", ContentType::Animal, &[Physics])]);
        let b = DatasetManifest::new(vec![image("b", ContentType::Object, &[Structure, Distortion])]);
        let sum = dataset_stats(&a) + dataset_stats(&b);
        assert_eq!(dataset_stats(&a.concat(b)), sum);
    }
}
