//! Two-pass union-find connected component labelling.

use serde::{Deserialize, Serialize};

use super::mask::{Mask, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// 1-based label, in raster order of the component's first pixel.
    pub label: u32,
    pub area: u64,
    pub bbox: Rect,
    pub first_pixel: (u32, u32),
}

#[derive(Debug, Clone)]
pub struct Labeling {
    pub width: u32,
    pub height: u32,
    /// 0 for background.
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

impl Labeling {
    pub fn label_at(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn component_mask(&self, label: u32) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.label_at(x, y) == label)
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller provisional label as root.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Labels the set pixels of `mask`; an empty mask yields no components.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Labeling {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut provisional = vec![0u32; w * h];
    // parent[0] is an unused background slot.
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut count = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[count] = l;
                    count += 1;
                }
            };
            if x > 0 {
                push(provisional[i - 1]);
            }
            if y > 0 {
                push(provisional[i - w]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(provisional[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(provisional[i - w + 1]);
                    }
                }
            }
            if count == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                provisional[i] = l;
            } else {
                let first = neighbours[0];
                provisional[i] = first;
                for &other in &neighbours[1..count] {
                    union(&mut parent, first, other);
                }
            }
        }
    }

    // Second pass: resolve roots and renumber in order of first encounter.
    let mut final_of_root = vec![0u32; parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if provisional[i] == 0 {
                continue;
            }
            let root = find(&mut parent, provisional[i]) as usize;
            if final_of_root[root] == 0 {
                components.push(Component {
                    label: components.len() as u32 + 1,
                    area: 0,
                    bbox: Rect::new(x as u32, y as u32, 1, 1),
                    first_pixel: (x as u32, y as u32),
                });
                final_of_root[root] = components.len() as u32;
            }
            let label = final_of_root[root];
            labels[i] = label;
            let c = &mut components[label as usize - 1];
            c.area += 1;
            let (x, y) = (x as u32, y as u32);
            let (x0, y0) = (c.bbox.x.min(x), c.bbox.y.min(y));
            let (x1, y1) = (c.bbox.right().max(x + 1), c.bbox.bottom().max(y + 1));
            c.bbox = Rect::new(x0, y0, x1 - x0, y1 - y0);
        }
    }

    Labeling {
        width: mask.width(),
        height: mask.height(),
        labels,
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_has_no_components() {
        let l = connected_components(&Mask::new(7, 5), Connectivity::Eight);
        assert!(l.components.is_empty());
        assert!(l.labels.iter().all(|v| *v == 0));
    }

    #[test]
    fn diagonal_pixels_depend_on_connectivity() {
        let m = Mask::from_fn(2, 2, |x, y| x == y);
        assert_eq!(connected_components(&m, Connectivity::Eight).components.len(), 1);
        assert_eq!(connected_components(&m, Connectivity::Four).components.len(), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two arms joined only on the bottom row force a label merge.
        let rows = ["X.X", "X.X", "XXX"];
        let m = Mask::from_fn(3, 3, |x, y| rows[y as usize].as_bytes()[x as usize] == b'X');
        let l = connected_components(&m, Connectivity::Four);
        assert_eq!(l.components.len(), 1);
        assert_eq!(l.components[0].area, 7);
        assert_eq!(l.components[0].bbox, Rect::new(0, 0, 3, 3));
    }

    #[test]
    fn labels_follow_first_pixel_order() {
        let rows = ["..X.", "X...", "X..X"];
        let m = Mask::from_fn(4, 3, |x, y| rows[y as usize].as_bytes()[x as usize] == b'X');
        let l = connected_components(&m, Connectivity::Four);
        assert_eq!(l.components.len(), 3);
        assert_eq!(l.label_at(2, 0), 1);
        assert_eq!(l.label_at(0, 1), 2);
        assert_eq!(l.label_at(3, 2), 3);
        assert_eq!(l.components[1].first_pixel, (0, 1));
        assert_eq!(l.component_mask(2).area(), 2);
    }

    #[test]
    fn areas_sum_to_set_pixels() {
        let m = Mask::from_fn(16, 9, |x, y| (x * 7 + y * 3) % 5 < 2);
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let l = connected_components(&m, conn);
            assert_eq!(l.components.iter().map(|c| c.area).sum::<u64>(), m.area());
        }
    }
}
