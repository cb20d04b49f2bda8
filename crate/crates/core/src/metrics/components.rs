//! Connected-component labelling with union-find.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::sample::Mask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_neighbours(n: u8) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }
}

/// Labels are `1..=count` in raster-scan order of each region's first pixel; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Array2<u32>,
    pub count: usize,
    /// `areas[i]` is the pixel count of label `i + 1`.
    pub areas: Vec<usize>,
}

impl Components {
    /// Drop regions smaller than `min_area` pixels and relabel.
    pub fn filter_min_area(&self, min_area: usize) -> Components {
        let keep = self.labels.mapv(|l| l > 0 && self.areas[l as usize - 1] >= min_area);
        relabel(&self.labels, &keep)
    }

    pub fn mask(&self) -> Mask {
        self.labels.mapv(|l| l > 0)
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub fn connected_components(mask: &Mask, conn: Connectivity) -> Components {
    let (h, w) = mask.dim();
    let mut prov = Array2::<u32>::zeros((h, w));
    let mut parent: Vec<u32> = vec![0];
    for i in 0..h {
        for j in 0..w {
            if !mask[[i, j]] {
                continue;
            }
            let mut neigh = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l > 0 {
                    neigh[n] = l;
                    n += 1;
                }
            };
            if j > 0 {
                push(prov[[i, j - 1]]);
            }
            if i > 0 {
                push(prov[[i - 1, j]]);
                if conn == Connectivity::Eight {
                    if j > 0 {
                        push(prov[[i - 1, j - 1]]);
                    }
                    if j + 1 < w {
                        push(prov[[i - 1, j + 1]]);
                    }
                }
            }
            let l = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neigh[0];
                for &o in &neigh[1..n] {
                    union(&mut parent, first, o);
                }
                first
            };
            prov[[i, j]] = l;
        }
    }
    for l in prov.iter_mut() {
        if *l > 0 {
            *l = find(&mut parent, *l);
        }
    }
    relabel(&prov, mask)
}

/// Renumber the labelled pixels where `keep` holds in raster discovery order.
fn relabel(labels: &Array2<u32>, keep: &Mask) -> Components {
    let mut map = std::collections::HashMap::new();
    let mut areas = Vec::new();
    let mut out = Array2::<u32>::zeros(labels.dim());
    for ((idx, &l), o) in labels.indexed_iter().zip(out.iter_mut()) {
        if l == 0 || !keep[idx] {
            continue;
        }
        let next = map.len() as u32 + 1;
        let new = *map.entry(l).or_insert_with(|| {
            areas.push(0);
            next
        });
        areas[new as usize - 1] += 1;
        *o = new;
    }
    Components {
        labels: out,
        count: areas.len(),
        areas,
    }
}
