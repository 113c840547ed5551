//! Slow reference implementations used to check the fast paths.
//!
//! Nothing here shares code with the propagation engine beyond the
//! coordinate-level neighbourhood helpers; each function follows its
//! mathematical definition as literally as possible.

use std::collections::VecDeque;

use crate::grid::{neighbors, Coord, Image, StructuringElement};
use crate::pixel::Pixel;

fn coords(width: usize, height: usize) -> impl Iterator<Item = Coord> {
    (0..height).flat_map(move |y| (0..width).map(move |x| Coord::new(x as u32, y as u32)))
}

/// Reconstruction by repeated elementary dilation:
/// `J <- max(J(q), q in N(p) + p) min I(p)` applied to a full snapshot of `J`
/// until nothing changes.
pub fn iterated_dilation_reconstruction<T: Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    g: &StructuringElement,
) -> Image<T> {
    let dims = mask.dims();
    let mut current = marker.clone();
    loop {
        let next = Image::from_fn(dims.0, dims.1, |p| {
            let dilated = neighbors(p, g, dims)
                .unwrap()
                .into_iter()
                .fold(current.get(p), |acc, q| acc.max_of(current.get(q)));
            dilated.min_of(mask.get(p))
        });
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Connected-component labels of the nonzero pixels of `img` (0 = none).
pub fn label_components(img: &Image<u8>, g: &StructuringElement) -> (Image<u32>, u32) {
    let dims = img.dims();
    let mut labels = Image::filled(dims.0, dims.1, 0u32);
    let mut next = 0;
    for start in coords(dims.0, dims.1) {
        if img.get(start) == 0 || labels.get(start) != 0 {
            continue;
        }
        next += 1;
        labels.set(start, next);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(p, g, dims).unwrap() {
                if img.get(q) != 0 && labels.get(q) == 0 {
                    labels.set(q, next);
                    queue.push_back(q);
                }
            }
        }
    }
    (labels, next)
}

/// Binary reconstruction by flood fill: the mask components (nonzero
/// pixels) that touch the marker's support, painted 255.
pub fn component_reconstruction(
    mask: &Image<u8>,
    marker: &Image<u8>,
    g: &StructuringElement,
) -> Image<u8> {
    let (labels, count) = label_components(mask, g);
    let mut keep = vec![false; count as usize + 1];
    for p in coords(mask.width(), mask.height()) {
        if marker.get(p) != 0 && labels.get(p) != 0 {
            keep[labels.get(p) as usize] = true;
        }
    }
    labels.map(|l| if l != 0 && keep[l as usize] { 255 } else { 0 })
}

/// Pixels of plateaus (equal-valued connected sets) with no strictly higher
/// neighbour, by explicit plateau labelling.
pub fn regional_maxima_bruteforce<T: Pixel>(img: &Image<T>, g: &StructuringElement) -> Vec<Coord> {
    let dims = img.dims();
    let mut label = Image::filled(dims.0, dims.1, usize::MAX);
    let mut plateaus: Vec<Vec<Coord>> = Vec::new();
    for start in coords(dims.0, dims.1) {
        if label.get(start) != usize::MAX {
            continue;
        }
        let id = plateaus.len();
        let value = img.get(start);
        let mut members = vec![start];
        label.set(start, id);
        let mut i = 0;
        while i < members.len() {
            let p = members[i];
            i += 1;
            for q in neighbors(p, g, dims).unwrap() {
                if label.get(q) == usize::MAX && img.get(q) == value {
                    label.set(q, id);
                    members.push(q);
                }
            }
        }
        plateaus.push(members);
    }
    let mut out: Vec<Coord> = plateaus
        .into_iter()
        .filter(|members| {
            let value = img.get(members[0]);
            members.iter().all(|&p| {
                neighbors(p, g, dims)
                    .unwrap()
                    .into_iter()
                    .all(|q| img.get(q) <= value)
            })
        })
        .flatten()
        .collect();
    out.sort_by_key(|p| (p.y, p.x));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_profile() {
        let mask = Image::from_vec(5, 1, vec![9u8; 5]).unwrap();
        let marker = Image::from_vec(5, 1, vec![5u8, 0, 0, 0, 0]).unwrap();
        let out = iterated_dilation_reconstruction(&mask, &marker, &StructuringElement::FOUR);
        assert_eq!(out.data(), &[5, 5, 5, 5, 5]);
    }

    #[test]
    fn components_touching_marker() {
        #[rustfmt::skip]
        let mask = Image::from_vec(5, 3, vec![
            255, 255, 0, 255, 0,
            0,   0,   0, 255, 0,
            255, 0,   0, 0,   0,
        ]).unwrap();
        let mut marker = Image::filled(5, 3, 0u8);
        marker.set(Coord::new(3, 1), 255);
        let out = component_reconstruction(&mask, &marker, &StructuringElement::FOUR);
        #[rustfmt::skip]
        assert_eq!(out.data(), &[
            0, 0, 0, 255, 0,
            0, 0, 0, 255, 0,
            0, 0, 0, 0,   0,
        ]);
    }

    #[test]
    fn maxima_of_two_plateaus() {
        #[rustfmt::skip]
        let img = Image::from_vec(5, 5, vec![
            7u8, 7, 1, 1, 1,
            7,   7, 1, 1, 1,
            1,   1, 1, 1, 1,
            1,   1, 1, 4, 4,
            1,   1, 1, 4, 4,
        ]).unwrap();
        let maxima = regional_maxima_bruteforce(&img, &StructuringElement::EIGHT);
        let want: Vec<Coord> = [(0, 0), (1, 0), (0, 1), (1, 1), (3, 3), (4, 3), (3, 4), (4, 4)]
            .into_iter()
            .map(|(x, y)| Coord::new(x, y))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect::<Vec<_>>();
        let mut want = want;
        want.sort_by_key(|p| (p.y, p.x));
        assert_eq!(maxima, want);
    }
}
